"""CSV 输出：以 # 开头的配置头 + csv.writer 表体"""
import csv
import io
import json
import os
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from app.models import LyapunovEstimate, NormalFormBundle, SpacingHistogram
from app.services.lyapunov_service import lyapunov_service

LYAPUNOV_COLUMNS = ["p", "gamma", "stderr", "ln_kappa_p", "channel_type"]
SCAN_COLUMNS = ["E", "p", "gamma_sim", "stderr", "gamma_formula"]
HISTOGRAM_COLUMNS = ["x", "density", "count", "left", "right"]


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "value"):
        return value.value
    return value


def header_lines(meta: Dict[str, Any]) -> List[str]:
    """# key=value，值为 JSON 以便原样读回"""
    return [f"# {k}={json.dumps(_plain(v), sort_keys=True, default=str)}" for k, v in meta.items()]


def to_csv(columns: Sequence[str], rows: Iterable[Sequence[Any]], meta: Dict[str, Any]) -> str:
    output = io.StringIO()
    for line in header_lines(meta):
        output.write(line + "\n")
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f"{x:.12g}" if isinstance(x, float) else _plain(x) for x in row])
    return output.getvalue()


def save_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]], meta: Dict[str, Any]) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    text = to_csv(columns, rows, meta)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def read_csv(text: str):
    """返回 (头部字典, 列名, 行)"""
    meta: Dict[str, Any] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = json.loads(value)
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def lyapunov_rows(est: LyapunovEstimate, bundle: NormalFormBundle) -> List[list]:
    """每个通道一行: p, γ_p, stderr, ln|κ_p|, 类型"""
    gamma, stderr = lyapunov_service.channel_exponents(est)
    ch = bundle.channels
    ln_kappa = ch.ln_kappa
    return [
        [p + 1, float(gamma[p]), float(stderr[p]), float(ln_kappa[p]), ch.kinds[p].value]
        for p in range(ch.L)
    ]


def histogram_rows(hist: SpacingHistogram) -> List[list]:
    """每个 bin 一行: 中心 x, 密度, 计数, 左右边界"""
    edges = np.asarray(hist.edges, dtype=float)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return [
        [float(centres[i]), float(hist.density[i]), int(hist.counts[i]), float(edges[i]), float(edges[i + 1])]
        for i in range(len(hist.density))
    ]
