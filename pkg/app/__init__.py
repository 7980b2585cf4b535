"""准一维无序系统 Lyapunov 谱实验室"""
