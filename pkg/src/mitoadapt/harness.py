"""Cross-dataset experiment orchestration and Table-1-style reporting.

A grid run crosses adaptation methods with (source, target) dataset
pairs, repeats each cell with seeds ``seed_base + i``, and evaluates all
three stopping criteria post hoc from the same per-run trace: one
training, three selections.  Per-run records and traces are persisted
as JSON / JSON-lines; the aggregate table reports mean +/- std of the
target-test foreground IoU per (criterion, method, pair).

Externally stylized targets (produced by an unpaired style-transfer
tool, one image stack per stylization epoch) are registered as a
dataset family; the solidity criterion then selects the stylization
epoch instead of a training epoch.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import train as training
from .dataio import AnnotatedDataset, PatchSampler, load_dataset
from .exceptions import ConfigError, RegistrationError, SelectionError
from .morpho import (
    CRITERIA,
    SolidityTrace,
    TraceEntry,
    average_solidity,
    objective_solidity,
    select_by_criterion,
)
from .nets import NetworkSpec
from .objectives import iou_f
from .preprocess import clahe, match_stack

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

METHOD_BASES = ("baseline", "ssl", "ynet", "styled-baseline")
METHOD_MODIFIERS = ("hm", "clahe")

# Published cross-dataset numbers, shipped as reference metadata only:
# multi-hour GPU training on the real volumes is far outside desk scale,
# so nothing here is asserted by the test suite.
PUBLISHED_REFERENCE = {
    "supervised_ceiling_iou": {
        "lucchi++": 0.9066,
        "kasthuri++": 0.9154,
        "vnc": 0.8041,
    },
    "baseline_hm_source_val": {
        ("lucchi++", "kasthuri++"): (0.679, 0.043),
        ("lucchi++", "vnc"): (0.265, 0.028),
        ("kasthuri++", "lucchi++"): (0.268, 0.048),
    },
    "style_transfer_tool": {"epochs": 400, "optimizer": "adam", "lr": 2e-4},
}


@dataclass
class ExperimentConfig:
    """Method x pair x repeat grid plus desk-scale model/training knobs."""

    methods: list[str]
    pairs: list[tuple[str, str]]
    repeats: int = 10
    criteria: tuple[str, ...] = CRITERIA
    seed_base: int = 0
    depth: int = 4
    base_filters: int = 16
    patch_size: int = 256
    patch_count: int = 1000
    val_fraction: float = 0.1
    threshold: float = 0.5
    min_object_px: int = 10
    baseline_epochs: int = 100
    baseline_max_lr: float = 2e-4
    ssl_epochs: tuple[int, int] = (200, 60)
    ssl_max_lrs: tuple[float, float] = (5e-4, 1e-4)
    ynet_epochs: tuple[int, int, int] = (50, 40, 100)
    ynet_lrs: tuple[float, float, float] = (1e-3, 2e-4, 2e-4)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.pairs:
            raise ConfigError("at least one (source, target) pair is required")
        for method in self.methods:
            parse_method(method)
        for criterion in self.criteria:
            if criterion not in CRITERIA:
                raise ConfigError(f"unknown criterion {criterion!r}")

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        grid = raw.get("grid", raw)
        kwargs = dict(grid)
        if "pairs" in kwargs:
            kwargs["pairs"] = [tuple(p) for p in kwargs["pairs"]]
        for key in ("ssl_epochs", "ssl_max_lrs", "ynet_epochs", "ynet_lrs", "criteria"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def parse_method(method: str) -> tuple[str, frozenset[str]]:
    """Split a method id like ``ynet+hm+clahe`` into base and modifiers."""
    parts = method.split("+")
    base = parts[0]
    if base not in METHOD_BASES:
        raise ConfigError(f"unknown method {method!r}; base must be one of {METHOD_BASES}")
    mods = frozenset(parts[1:])
    unknown = mods - set(METHOD_MODIFIERS)
    if unknown:
        raise ConfigError(f"unknown method modifiers {sorted(unknown)} in {method!r}")
    return base, mods


@dataclass(frozen=True)
class StyledFamily:
    """Per-stylization-epoch variants of one target dataset."""

    name: str
    epochs: tuple[int, ...]
    ids: tuple[str, ...]


class DatasetRegistry:
    """Name -> dataset mapping shared by all grid runs."""

    def __init__(self):
        self._datasets: dict[str, AnnotatedDataset] = {}
        self._families: dict[str, StyledFamily] = {}

    def register(self, name: str, dataset: AnnotatedDataset) -> None:
        self._datasets[name] = dataset

    def register_path(self, name: str, root) -> None:
        self._datasets[name] = load_dataset(root)

    def get(self, name: str) -> AnnotatedDataset:
        try:
            return self._datasets[name]
        except KeyError:
            raise RegistrationError(f"dataset {name!r} is not registered") from None

    def family(self, name: str) -> StyledFamily:
        try:
            return self._families[name]
        except KeyError:
            raise RegistrationError(f"styled family {name!r} is not registered") from None

    def has_family(self, name: str) -> bool:
        return name in self._families

    def register_styled_dataset(
        self,
        styled_root,
        epochs,
        family: str | None = None,
        labels_from: str | None = None,
    ) -> StyledFamily:
        """Register one stylized stack per stylization epoch.

        Expects ``<styled_root>/epoch_<E>/x/*.png`` per requested epoch.
        Stylization only restyles intensities, so ground-truth masks can
        be borrowed from ``labels_from`` for research-mode evaluation.
        Re-registration of the same root is idempotent and returns the
        same ids.
        """
        styled_root = Path(styled_root)
        epochs = tuple(int(e) for e in epochs)
        if not epochs:
            raise RegistrationError("at least one stylization epoch is required")
        family = family or styled_root.name
        labels = self.get(labels_from).labels if labels_from else None
        ids = []
        for epoch in epochs:
            epoch_dir = styled_root / f"epoch_{epoch}"
            if not epoch_dir.is_dir():
                raise RegistrationError(f"missing stylization epoch directory {epoch_dir}")
            ds = load_dataset(epoch_dir)
            if labels is not None and ds.labels is None:
                ds = replace(ds, labels=labels)
            name = f"{family}@epoch{epoch}"
            self._datasets[name] = ds
            ids.append(name)
        fam = StyledFamily(name=family, epochs=epochs, ids=tuple(ids))
        self._families[family] = fam
        return fam


def _network_spec(cfg: ExperimentConfig, variant: str) -> NetworkSpec:
    return NetworkSpec(variant=variant, depth=cfg.depth, base_filters=cfg.base_filters)


def _sampler(cfg: ExperimentConfig, seed: int) -> PatchSampler:
    return PatchSampler(
        patch_size=cfg.patch_size,
        count=cfg.patch_count,
        val_fraction=cfg.val_fraction,
        rng_seed=seed,
    )


def _apply_clahe(ds: AnnotatedDataset) -> AnnotatedDataset:
    return replace(ds, images=clahe(ds.images))


def execute_run(
    cfg: ExperimentConfig,
    registry: DatasetRegistry,
    method: str,
    source_name: str,
    target_name: str,
    seed: int,
) -> tuple[SolidityTrace, dict]:
    """Train one run of ``method`` and return its selection trace."""
    base, mods = parse_method(method)
    source = registry.get(source_name)
    sampler = _sampler(cfg, seed)

    if base == "styled-baseline":
        family = registry.family(target_name)
        if "clahe" in mods:
            source = _apply_clahe(source)
        plan = training.baseline_plan(cfg.baseline_epochs, cfg.baseline_max_lr, rng_seed=seed)
        result = training.train_baseline(
            source, _network_spec(cfg, "attention_unet"), plan,
            sampler=sampler, eval_target=None,
            threshold=cfg.threshold, min_object_px=cfg.min_object_px,
        )
        trace = SolidityTrace(
            objective_solidity=objective_solidity(source.labels, cfg.min_object_px),
            min_object_px=cfg.min_object_px,
        )
        for epoch in family.epochs:
            styled = registry.get(f"{family.name}@epoch{epoch}")
            images = clahe(styled.images) if "clahe" in mods else styled.images
            probs = training.predict_stack(result.model, images)
            masks = probs >= cfg.threshold
            entry = TraceEntry(
                epoch=epoch,
                target_solidity=average_solidity(masks, cfg.min_object_px),
            )
            if styled.labels is not None:
                entry.target_iou = iou_f(probs, styled.labels.data, cfg.threshold).iou_f
            trace.append(entry)
        return trace, {"stylization_epochs": list(family.epochs)}

    target = registry.get(target_name)
    if "clahe" in mods:
        source = _apply_clahe(source)
        target = _apply_clahe(target)

    if base == "baseline":
        eval_target = target
        if "hm" in mods:
            # Re-use the source-trained model on target images remapped
            # toward the source intensity distribution at inference time.
            eval_target = replace(target, images=match_stack(target.images, source.images))
        plan = training.baseline_plan(cfg.baseline_epochs, cfg.baseline_max_lr, rng_seed=seed)
        result = training.train_baseline(
            source, _network_spec(cfg, "attention_unet"), plan,
            sampler=sampler, eval_target=eval_target,
            threshold=cfg.threshold, min_object_px=cfg.min_object_px,
        )
    elif base == "ssl":
        plan = training.ssl_plan(
            cfg.ssl_epochs[0], cfg.ssl_epochs[1],
            cfg.ssl_max_lrs[0], cfg.ssl_max_lrs[1],
            rng_seed=seed,
        )
        result = training.train_ssl(
            source, target, _network_spec(cfg, "attention_unet"), plan,
            sampler=sampler, hm_source="hm" in mods,
            threshold=cfg.threshold, min_object_px=cfg.min_object_px,
        )
    else:  # ynet
        plan = training.ynet_plan(cfg.ynet_epochs, cfg.ynet_lrs, rng_seed=seed)
        result = training.train_ynet(
            source, target, _network_spec(cfg, "attention_ynet"), plan,
            sampler=sampler, hm_after_first_phase="hm" in mods,
            threshold=cfg.threshold, min_object_px=cfg.min_object_px,
        )
    return result.trace, {}


def _selections(trace: SolidityTrace, criteria) -> dict:
    out = {}
    for criterion in criteria:
        try:
            epoch = select_by_criterion(trace, criterion)
        except SelectionError:
            out[criterion] = None
            continue
        out[criterion] = {"epoch": epoch, "iou_f": trace.entry_at(epoch).target_iou}
    return out


def run_id(method: str, source: str, target: str, repeat: int) -> str:
    return f"{method}__{source}__{target}__r{repeat}"


def run_grid(
    cfg: ExperimentConfig,
    registry: DatasetRegistry,
    out_dir=None,
) -> "ResultTable":
    """Execute the full grid and aggregate mean +/- std per table cell.

    Every run is seeded with ``seed_base + repeat`` and its record
    (selections for all criteria plus the full trace) is persisted, so
    selection is reproducible from the stored traces without
    retraining.  Failed runs are retried once, then recorded with their
    error and the affected cell is marked incomplete.
    """
    records = []
    for method in cfg.methods:
        for source_name, target_name in cfg.pairs:
            for repeat in range(cfg.repeats):
                seed = cfg.seed_base + repeat
                record = {
                    "run_id": run_id(method, source_name, target_name, repeat),
                    "method": method,
                    "source": source_name,
                    "target": target_name,
                    "repeat": repeat,
                    "seed": seed,
                }
                for attempt in (1, 2):
                    try:
                        trace, extra = execute_run(
                            cfg, registry, method, source_name, target_name, seed
                        )
                    except Exception as exc:  # noqa: BLE001 - recorded, not dropped
                        record["status"] = "failed"
                        record["error"] = f"{type(exc).__name__}: {exc}"
                        record["attempts"] = attempt
                    else:
                        record.update(extra)
                        record["status"] = "ok"
                        record["attempts"] = attempt
                        record["objective_solidity"] = trace.objective_solidity
                        record["selections"] = _selections(trace, cfg.criteria)
                        record["trace"] = trace.to_dict()
                        break
                records.append(record)
                if out_dir is not None:
                    persist_record(record, out_dir)
    table = ResultTable.from_records(records, cfg.criteria, cfg.repeats)
    if out_dir is not None:
        table.to_csv(Path(out_dir) / "table.csv")
    return table


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def persist_record(record: dict, out_dir) -> None:
    """Append one finished run to the results store (atomic per-run writes)."""
    out_dir = Path(out_dir)
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "runs" / f"{record['run_id']}.json",
                  json.dumps(record, indent=2))
    if record.get("status") != "ok":
        return
    rows = []
    for entry in record["trace"]["entries"]:
        rows.append(json.dumps({
            "dataset": record["target"],
            "method": record["method"],
            "run_id": record["run_id"],
            "epoch": entry["epoch"],
            "iou_f": entry["target_iou"],
            "solidity": entry["target_solidity"],
            "source_val_iou": entry["source_val_iou"],
            "objective_solidity": record["objective_solidity"],
        }))
    _atomic_write(out_dir / "traces" / f"{record['run_id']}.jsonl",
                  "\n".join(rows) + "\n")


def persist_records(records, out_dir) -> None:
    for record in records:
        persist_record(record, out_dir)


def load_records(out_dir) -> list[dict]:
    runs_dir = Path(out_dir) / "runs"
    return [json.loads(p.read_text()) for p in sorted(runs_dir.glob("*.json"))]


@dataclass(frozen=True)
class TableCell:
    mean: float
    std: float
    n: int
    complete: bool
    epochs: tuple[int, ...]


@dataclass
class ResultTable:
    """Rows keyed by (criterion, method, source, target)."""

    cells: dict[tuple[str, str, str, str], TableCell] = field(default_factory=dict)
    repeats: int = 0

    @classmethod
    def from_records(cls, records, criteria, repeats) -> "ResultTable":
        grouped: dict[tuple, list] = {}
        failures: dict[tuple, int] = {}
        for record in records:
            key_base = (record["method"], record["source"], record["target"])
            if record.get("status") != "ok":
                failures[key_base] = failures.get(key_base, 0) + 1
                continue
            for criterion in criteria:
                selection = record["selections"].get(criterion)
                if selection is None or selection.get("iou_f") is None:
                    continue
                key = (criterion,) + key_base
                grouped.setdefault(key, []).append(
                    (selection["iou_f"], selection["epoch"])
                )
        cells = {}
        for key, values in grouped.items():
            ious = np.asarray([v[0] for v in values], dtype=np.float64)
            epochs = tuple(int(v[1]) for v in values)
            n = len(values)
            complete = n == repeats and failures.get(key[1:], 0) == 0
            cells[key] = TableCell(
                mean=float(ious.mean()),
                std=float(ious.std()),
                n=n,
                complete=complete,
                epochs=epochs,
            )
        return cls(cells=cells, repeats=repeats)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "criterion", "method", "source", "target",
                "mean_iou_f", "std_iou_f", "n", "complete", "selected_epochs",
            ])
            for key in sorted(self.cells):
                cell = self.cells[key]
                writer.writerow([
                    *key,
                    repr(cell.mean), repr(cell.std), cell.n, cell.complete,
                    " ".join(str(e) for e in cell.epochs),
                ])


def export_traces(out_dir, plot: bool = True) -> Path:
    """Aggregate stored traces into mean/std envelopes plus plots.

    Writes ``trace_summary.csv`` with one row per (method, source,
    target, epoch) and, when ``plot`` is set, a solidity/IoU figure per
    group with the source-objective solidity as a dashed line.
    """
    out_dir = Path(out_dir)
    records = load_records(out_dir)
    groups: dict[tuple, list[dict]] = {}
    for record in records:
        if record.get("status") != "ok":
            continue
        groups.setdefault(
            (record["method"], record["source"], record["target"]), []
        ).append(record)

    summary_path = out_dir / "trace_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "method", "source", "target", "epoch",
            "mean_solidity", "std_solidity", "mean_iou_f", "std_iou_f",
            "n", "objective_solidity",
        ])
        for key in sorted(groups):
            stats = _envelope(groups[key])
            for row in stats["rows"]:
                writer.writerow(list(key) + row)
            if plot:
                _plot_group(out_dir, key, stats)
    return summary_path


def _envelope(records: list[dict]) -> dict:
    by_epoch: dict[int, dict[str, list[float]]] = {}
    for record in records:
        for entry in record["trace"]["entries"]:
            slot = by_epoch.setdefault(entry["epoch"], {"solidity": [], "iou": []})
            if entry["target_solidity"] is not None:
                slot["solidity"].append(entry["target_solidity"])
            if entry["target_iou"] is not None:
                slot["iou"].append(entry["target_iou"])
    objective = records[0].get("objective_solidity")

    def stats(values):
        if not values:
            return None, None
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    rows = []
    series = {"epochs": [], "sol_mean": [], "sol_std": [], "iou_mean": [], "iou_std": []}
    for epoch in sorted(by_epoch):
        sol_mean, sol_std = stats(by_epoch[epoch]["solidity"])
        iou_mean, iou_std = stats(by_epoch[epoch]["iou"])
        n = max(len(by_epoch[epoch]["solidity"]), len(by_epoch[epoch]["iou"]))
        rows.append([epoch, sol_mean, sol_std, iou_mean, iou_std, n, objective])
        series["epochs"].append(epoch)
        series["sol_mean"].append(sol_mean)
        series["sol_std"].append(sol_std)
        series["iou_mean"].append(iou_mean)
        series["iou_std"].append(iou_std)
    return {"rows": rows, "series": series, "objective": objective}


def _plot_group(out_dir: Path, key: tuple, stats: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = stats["series"]
    epochs = series["epochs"]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, mean_key, std_key, title in (
        (axes[0], "sol_mean", "sol_std", "average solidity"),
        (axes[1], "iou_mean", "iou_std", "foreground IoU"),
    ):
        mean = np.array([np.nan if v is None else v for v in series[mean_key]], dtype=float)
        std = np.array([0.0 if v is None else v for v in series[std_key]], dtype=float)
        ax.plot(epochs, mean, marker="o")
        ax.fill_between(epochs, mean - std, mean + std, alpha=0.3)
        ax.set_xlabel("epoch")
        ax.set_title(title)
    if stats["objective"] is not None:
        axes[0].axhline(stats["objective"], linestyle="--", color="k", label="source objective")
        axes[0].legend()
    method, source, target = key
    fig.suptitle(f"{method}: {source} -> {target}")
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(plots_dir / f"{method}__{source}__{target}.png", dpi=110)
    plt.close(fig)
