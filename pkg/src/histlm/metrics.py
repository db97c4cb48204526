"""Shared-task scoring: PoS (accuracy + macro-F1), morphological features with
deductions for spurious categories, and lemmatisation (acc@1 + acc@3)."""

from __future__ import annotations

from dataclasses import dataclass, field

TASKS = ("pos", "morph", "lemma")


@dataclass(frozen=True)
class ScoreReport:
    task: str
    score: float
    components: dict = field(default_factory=dict)
    n_tokens: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def to_tsv(self) -> str:
        rows = [("task", self.task), ("score", f"{self.score:.6f}"), ("tokens", str(self.n_tokens))]
        rows += [(k, f"{v:.6f}") for k, v in self.components.items()]
        return "".join(f"{k}\t{v}\n" for k, v in rows)


def _check_lengths(pred, gold):
    if len(pred) != len(gold):
        raise ValueError(f"prediction/gold length mismatch: {len(pred)} vs {len(gold)}")


def macro_f1(pred: list[str], gold: list[str]) -> float:
    """Unweighted mean of per-class F1 over every class seen in gold or pred."""
    classes = sorted(set(gold) | set(pred))
    if not classes:
        return 1.0
    total = 0.0
    for c in classes:
        tp = sum(p == c and g == c for p, g in zip(pred, gold))
        fp = sum(p == c and g != c for p, g in zip(pred, gold))
        fn = sum(p != c and g == c for p, g in zip(pred, gold))
        total += 2 * tp / (2 * tp + fp + fn)
    return total / len(classes)


def pos_score(pred: list[str], gold: list[str]) -> ScoreReport:
    _check_lengths(pred, gold)
    if not gold:
        return ScoreReport("pos", 1.0, {"accuracy": 1.0, "f1": 1.0})
    acc = sum(p == g for p, g in zip(pred, gold)) / len(gold)
    f1 = macro_f1(pred, gold)
    return ScoreReport("pos", (acc + f1) / 2, {"accuracy": acc, "f1": f1}, len(gold))


def morph_token_score(pred: dict[str, str], gold: dict[str, str]) -> float:
    spurious = sum(1 for cat in pred if cat not in gold)
    denom = len(gold) + spurious
    if denom == 0:
        return 1.0
    return sum(1 for cat, val in pred.items() if gold.get(cat) == val) / denom


def morph_score(pred: list[dict], gold: list[dict]) -> ScoreReport:
    _check_lengths(pred, gold)
    if not gold:
        return ScoreReport("morph", 1.0, {"accuracy": 1.0})
    per_token = [morph_token_score(p, g) for p, g in zip(pred, gold)]
    score = sum(per_token) / len(per_token)
    return ScoreReport("morph", score, {"accuracy": score}, len(gold))


def lemma_score(pred_topk: list[list[str]], gold: list[str]) -> ScoreReport:
    _check_lengths(pred_topk, gold)
    if not gold:
        return ScoreReport("lemma", 1.0, {"acc@1": 1.0, "acc@3": 1.0})
    at1 = sum(bool(c) and c[0] == g for c, g in zip(pred_topk, gold)) / len(gold)
    at3 = sum(g in c[:3] for c, g in zip(pred_topk, gold)) / len(gold)
    return ScoreReport("lemma", (at1 + at3) / 2, {"acc@1": at1, "acc@3": at3}, len(gold))


def report_table(reports: dict[str, dict[str, ScoreReport]]) -> str:
    """Languages as columns, tasks as rows, scores in percent; '-' where a cell is missing."""
    langs = sorted(reports)
    lines = ["task\t" + "\t".join(langs)]
    for task in TASKS:
        cells = []
        for lang in langs:
            r = reports[lang].get(task)
            cells.append("-" if r is None else f"{100 * r.score:.2f}")
        lines.append(task + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
