"""Per-class feature attribution from the input-side attention weights."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .attention import importance_profile
from .data import WindowSet, make_batches
from .errors import ContractError
from .model import IAMBiLSTM

GRID_COLUMNS = 13
CELL = 40


@dataclass
class CauseReport:
    importance: dict[int, np.ndarray]  # class -> (num_features,)
    top_features: dict[int, list[int]]
    window_counts: dict[int, int]
    omitted: list[int] = field(default_factory=list)  # classes with no usable windows
    correct_only: bool = True

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for c, imp in sorted(self.importance.items()):
            path = out / f"importance_class_{c:02d}.csv"
            ranks = np.empty(imp.size, dtype=int)
            ranks[np.argsort(-imp, kind="stable")] = np.arange(1, imp.size + 1)
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["feature", "importance", "rank"])
                for j, v in enumerate(imp):
                    w.writerow([j, repr(float(v)), int(ranks[j])])
            written.append(path)
            svg = out / f"heatmap_class_{c:02d}.svg"
            svg.write_text(heatmap_svg(imp, f"class {c}: attention received per feature"))
            written.append(svg)
        summary = out / "cause_summary.csv"
        with summary.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "windows", "top_features"])
            for c in sorted(set(self.importance) | set(self.omitted)):
                top = " ".join(str(j) for j in self.top_features.get(c, []))
                w.writerow([c, self.window_counts.get(c, 0), top if c not in self.omitted else "omitted"])
        written.append(summary)
        return written


def heatmap_svg(importance: np.ndarray, title: str) -> str:
    """Grid of cells, feature j at row j // 13, column j % 13.

    Cell colour interpolates linearly from white (0) to dark red (the
    vector's maximum); each cell is labelled with its feature index.
    """
    imp = np.asarray(importance, dtype=np.float64)
    rows = -(-imp.size // GRID_COLUMNS)
    top = max(float(imp.max()), 1e-300)
    width, height = GRID_COLUMNS * CELL, rows * CELL + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<text x="4" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>']
    for j, v in enumerate(imp):
        s = min(max(v / top, 0.0), 1.0)
        r, g, b = (round(255 + s * (139 - 255)), round(255 * (1 - s)), round(255 * (1 - s)))
        x, y = (j % GRID_COLUMNS) * CELL, 30 + (j // GRID_COLUMNS) * CELL
        ink = "#fff" if s > 0.55 else "#000"
        parts.append(f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})" '
                     f'stroke="#888" stroke-width="0.5"><title>f{j:02d}: {v:.6f}</title></rect>')
        parts.append(f'<text x="{x + CELL / 2}" y="{y + CELL / 2 + 4}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11" fill="{ink}">{j}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def explain(model: IAMBiLSTM, test_data: WindowSet, top_k: int = 4, correct_only: bool = True,
            batch_size: int = 256) -> CauseReport:
    """Mean input-attention importance per true class.

    With ``correct_only`` the average uses only windows the model classifies
    correctly; a class with none is listed in ``omitted``.
    """
    f = model.config.num_features
    if not 1 <= top_k <= f:
        raise ContractError(f"top_k must lie in 1..{f}, got {top_k}")
    if len(test_data) == 0:
        raise ContractError("cannot explain an empty test set")
    sums = np.zeros((model.config.num_classes, f))
    counts = np.zeros(model.config.num_classes, dtype=np.int64)
    for batch in make_batches(test_data, batch_size):
        out = model(batch.inputs, "eval")
        keep = np.ones(len(batch.labels), dtype=bool)
        if correct_only:
            keep = out.logits.data.argmax(axis=-1) == batch.labels
        w = out.attn_in.data
        for c in np.unique(batch.labels[keep]):
            sel = keep & (batch.labels == c)
            # importance_profile averages over the batch, so weight by window count
            sums[c] += importance_profile(w[sel]) * sel.sum()
            counts[c] += sel.sum()
    present = sorted(int(c) for c in np.unique(test_data.labels))
    importance, top, omitted = {}, {}, []
    for c in present:
        if counts[c] == 0:
            omitted.append(c)
            continue
        importance[c] = sums[c] / counts[c]
        top[c] = [int(j) for j in np.argsort(-importance[c], kind="stable")[:top_k]]
    return CauseReport(importance, top, {c: int(counts[c]) for c in present}, omitted, correct_only)
