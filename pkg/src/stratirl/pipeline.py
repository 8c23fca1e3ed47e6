"""File-based pipeline stages: learn, analyze, bench and replay.

Each stage reads its inputs from disk and writes every artifact atomically
under its output directory, so stages can be rerun or resumed independently.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plotting
from .analytics import (LabeledItem, LabeledSet, SvmParams, TsneParams, cluster_report,
                        distances_from_gram, embedding_csv, hac_complete, loo_evaluate, matrix_csv, tsne)
from .bench import bench_rl
from .kpirl import KpirlParams, KpirlTrace, kpirl
from .replay import ReplayMdp, expert_rows, lattice_mdp, simulate
from .rkhs import KernelSpec, RkhsVector, empirical_expectation, norm, read_rkhs, write_rkhs
from .rl import DeiParams, direct_estimate_iteration
from .skirmish import default_controlled_agent
from .trajectory import Match, atomic_write_bytes, read_manifest, read_match

log = logging.getLogger(__name__)

BEHAVIOR_DIR, REWARD_DIR, TRACE_DIR = "behavior", "reward", "trace"
RKHS_SUFFIX = ".rkhs"


def stage_seed(master: int, stage: str, *parts: str) -> int:
    """32-bit seed from ``sha256("master:stage[:part...]")``."""
    text = ":".join([str(master), stage, *parts])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")


@dataclass(frozen=True)
class AnalyticsParams:
    C: float = 1.0
    kernel: str = "linear"
    perplexity: float = 5.0
    tsne_iterations: int = 1000
    k: int = 3
    reward_scale: str = "unit"  # "unit": compare rewards by direction; "raw": as learned

    def __post_init__(self):
        if self.reward_scale not in ("unit", "raw"):
            raise ValueError(f"unknown reward_scale {self.reward_scale!r}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    bandwidth: float = 0.25
    dei: DeiParams = field(default_factory=DeiParams)
    kpirl: KpirlParams = field(default_factory=KpirlParams)
    analytics: AnalyticsParams = field(default_factory=AnalyticsParams)

    def to_json(self) -> bytes:
        return (json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n").encode("utf-8")


# -- learn --------------------------------------------------------------------------

@dataclass
class LearnOutcome:
    done: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


def controlled_agent(match: Match) -> str:
    return match.meta.controlled_agent_id or default_controlled_agent(match)


def learn_match(match: Match, config: PipelineConfig, seed: int
                ) -> tuple[RkhsVector, RkhsVector, KpirlTrace]:
    """Behavior expectation, selected KPIRL reward and trace for one match."""
    mdp = ReplayMdp(match, controlled_agent(match), discount=config.dei.discount)
    spec = KernelSpec(config.bandwidth, mdp.width, mdp.height)
    mu_e = empirical_expectation([mdp.features(expert_rows(mdp))], spec, T=config.kpirl.T)
    params = replace(config.kpirl, rl_params=config.dei, seed=seed)
    reward, trace = kpirl(mdp, mu_e, params)
    return mu_e, reward, trace


def _learn_paths(out: Path, match_id: str) -> tuple[Path, Path, Path]:
    return (out / BEHAVIOR_DIR / f"{match_id}{RKHS_SUFFIX}", out / REWARD_DIR / f"{match_id}{RKHS_SUFFIX}",
            out / TRACE_DIR / f"{match_id}.csv")


def _learn_job(job) -> tuple[str, str | None]:
    data_dir, out, file, match_id, config, seed = job
    try:
        match = read_match(Path(data_dir) / file)
        mu_e, reward, trace = learn_match(match, config, seed)
        b, r, t = _learn_paths(out, match_id)
        atomic_write_bytes(b, write_rkhs(mu_e, "behavior"))
        atomic_write_bytes(r, write_rkhs(reward, "reward"))
        atomic_write_bytes(t, trace.to_csv())
        log.info("learned %s: %s after %d iterations", match_id, trace.stop_reason, len(trace))
        return match_id, None
    except Exception as exc:  # one bad match must not stop the others
        log.error("learn failed for %s: %s", match_id, exc)
        return match_id, f"{type(exc).__name__}: {exc}"


def run_learn(data_dir, out_dir, config: PipelineConfig, force: bool = False, workers: int = 1,
              only: set[str] | None = None) -> LearnOutcome:
    """KPIRL for every manifest match; skips matches whose outputs all exist unless ``force``."""
    entries = read_manifest(data_dir)
    out = Path(out_dir)
    for sub in (BEHAVIOR_DIR, REWARD_DIR, TRACE_DIR):
        (out / sub).mkdir(parents=True, exist_ok=True)
    outcome = LearnOutcome()
    jobs = []
    for e in entries:
        if only is not None and e.match_id not in only:
            continue
        if not force and all(p.exists() for p in _learn_paths(out, e.match_id)):
            outcome.skipped.append(e.match_id)
            continue
        seed = stage_seed(config.seed, "learn", e.match_id)
        jobs.append((str(data_dir), out, e.file, e.match_id, config, seed))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_learn_job, jobs))
    else:
        results = [_learn_job(j) for j in jobs]
    for match_id, err in results:
        if err is None:
            outcome.done.append(match_id)
        else:
            outcome.failed[match_id] = err
    return outcome


# -- analyze ------------------------------------------------------------------------

def load_labeled(learned_dir, data_dir, role: str, unit: bool = False) -> LabeledSet:
    """Labeled vectors of one role for every manifest match that has a learned file.

    With ``unit`` every nonzero vector is scaled to unit RKHS norm.
    """
    folder = Path(learned_dir) / (BEHAVIOR_DIR if role == "behavior" else REWARD_DIR)
    items = []
    for e in read_manifest(data_dir):
        path = folder / f"{e.match_id}{RKHS_SUFFIX}"
        if path.exists():
            vec, _ = read_rkhs(path)
            if unit:
                size = norm(vec)
                vec = vec / size if size > 0 else vec
            items.append(LabeledItem(e.match_id, e.label, vec))
    return LabeledSet(tuple(items), role)


@dataclass
class RoleSummary:
    role: str
    n: int
    accuracy: float
    confusion: np.ndarray
    cluster_counts: np.ndarray
    fallback_cluster: int
    fallback_concentration: float
    final_kl: float


def analyze_role(labeled: LabeledSet, out_dir, params: AnalyticsParams, seed: int) -> RoleSummary:
    out = plotting.ensure_dir(out_dir)
    ids, labels = labeled.match_ids, labeled.labels
    gram = labeled.gram()
    D = distances_from_gram(gram)
    atomic_write_bytes(out / "distances.csv", matrix_csv(D, ids))

    emb = tsne(D, TsneParams(perplexity=min(params.perplexity, len(ids) - 1),
                             iterations=params.tsne_iterations, seed=seed))
    atomic_write_bytes(out / "tsne.csv", embedding_csv(emb, ids, labels))
    atomic_write_bytes(out / "tsne_kl.csv", ("iteration,kl\n" + "".join(
        f"{i},{float(v)!r}\n" for i, v in enumerate(emb.kl))).encode("utf-8"))
    plotting.plot_embedding(emb.embedding, labels, out / "tsne.svg", f"t-SNE ({labeled.role})")

    den = hac_complete(D)
    k = min(params.k, len(ids))
    assign = den.cut(k)
    atomic_write_bytes(out / "dendrogram.csv", den.to_csv())
    atomic_write_bytes(out / "clusters.csv", ("match_id,label,cluster\n" + "".join(
        f"{m},{l},{c}\n" for m, l, c in zip(ids, labels, assign))).encode("utf-8"))
    plotting.plot_dendrogram(den.linkage(), ids, labels, out / "dendrogram.svg",
                             f"complete linkage ({labeled.role})", k=k)
    report = cluster_report(assign, labels)
    atomic_write_bytes(out / "cluster_report.csv", report.to_csv())

    acc, cm = loo_evaluate(labeled, SvmParams(C=params.C), kernel=params.kernel, gram=gram)
    atomic_write_bytes(out / "confusion.csv", cm.to_csv())
    plotting.plot_confusion(cm.counts, cm.labels, out / "confusion.svg",
                            f"LOO {labeled.role}: {acc:.3f}")
    fb_cluster, fb_share = report.top_concentration("fallback")
    text = (f"role={labeled.role}\nitems={len(ids)}\nloo_accuracy={acc:.6f}\n"
            f"fallback_cluster={fb_cluster}\nfallback_concentration={fb_share:.6f}\n")
    atomic_write_bytes(out / "summary.txt", text.encode("utf-8"))
    return RoleSummary(labeled.role, len(ids), acc, cm.counts, report.counts, fb_cluster, fb_share,
                       float(emb.kl[-1]))


def run_analyze(learned_dir, data_dir, out_dir, params: AnalyticsParams, seed: int
                ) -> list[RoleSummary]:
    out = plotting.ensure_dir(out_dir)
    summaries = []
    for role in ("behavior", "reward"):
        labeled = load_labeled(learned_dir, data_dir, role,
                               unit=role == "reward" and params.reward_scale == "unit")
        if len(labeled) < 4:
            raise ValueError(f"need at least 4 learned {role} vectors, found {len(labeled)}")
        summaries.append(analyze_role(labeled, out / role, params, stage_seed(seed, "analyze", role)))
    lines = ["role,items,loo_accuracy,fallback_concentration"]
    lines += [f"{s.role},{s.n},{s.accuracy:.6f},{s.fallback_concentration:.6f}" for s in summaries]
    atomic_write_bytes(out / "summary.csv", ("\n".join(lines) + "\n").encode("utf-8"))
    return summaries


# -- bench --------------------------------------------------------------------------

def run_bench(out_dir, n_rewards: int, budget: int, seed: int, dei: DeiParams, bandwidth: float,
              matches: list | None = None, lattice_seeds=(0,)):
    """Solver comparison; on lattice replay MDPs by default, or on given recorded matches."""
    out = plotting.ensure_dir(out_dir)
    if matches:
        envs = [ReplayMdp(m, controlled_agent(m), discount=dei.discount) for m in matches]
        names = [m.match_id for m in matches]
    else:
        envs = [lattice_mdp(seed=s, discount=dei.discount) for s in lattice_seeds]
        names = [f"lattice{s}" for s in lattice_seeds]
    report = bench_rl(envs, n_rewards, budget, stage_seed(seed, "bench"), dei, bandwidth=bandwidth,
                      names=names)
    atomic_write_bytes(out / "bench.csv", report.to_csv())
    atomic_write_bytes(out / "bench_wide.csv", report.wide_csv())
    atomic_write_bytes(out / "bench_meta.json", report.meta_json())
    plotting.plot_bench({s: report.returns(s) for s in report.solvers()}, out / "bench.svg",
                        f"{n_rewards} random kernel rewards, budget {budget}")
    return report


# -- replay -------------------------------------------------------------------------

class SpecMismatchError(ValueError):
    pass


@dataclass
class ReplayResult:
    times: np.ndarray
    expert_xy: np.ndarray
    policy_xy: np.ndarray

    @property
    def displacement(self) -> np.ndarray:
        return np.linalg.norm(self.expert_xy - self.policy_xy, axis=1)

    def mean_displacement(self, fraction: float = 1.0) -> float:
        n = max(1, int(np.ceil(len(self.times) * fraction)))
        return float(self.displacement[:n].mean())


def replay_policy(match: Match, reward: RkhsVector, dei: DeiParams, seed: int,
                  agent_id: str | None = None) -> ReplayResult:
    """Train on the match's replay MDP and roll out from the expert's start for the expert's lifetime."""
    mdp = ReplayMdp(match, agent_id or controlled_agent(match), discount=dei.discount)
    if (reward.spec.arena_width, reward.spec.arena_height) != (mdp.width, mdp.height):
        raise SpecMismatchError(f"reward kernel spec {reward.spec} does not fit arena "
                                f"{mdp.width}x{mdp.height}")
    policy = direct_estimate_iteration(mdp, reward, replace(dei, seed=seed))
    rows = expert_rows(mdp)
    sim = simulate(mdp, policy, rows[:1], None, len(rows) - 1, np.random.default_rng(seed))
    path = sim.episode(0)
    if len(path) < len(rows):  # recording ended: hold the last position
        path = np.vstack([path, np.repeat(path[-1:], len(rows) - len(path), axis=0)])
    times = match.arrays().times[: len(rows)]
    return ReplayResult(times, rows[:, 1:3], path[: len(rows), 1:3])


def run_replay(match_path, reward_path, out_dir, dei: DeiParams, seed: int,
               agent_id: str | None = None, svg: bool = True) -> ReplayResult:
    out = plotting.ensure_dir(out_dir)
    match = read_match(match_path)
    reward, _ = read_rkhs(reward_path)
    res = replay_policy(match, reward, dei, stage_seed(seed, "replay", match.match_id), agent_id)
    lines = ["time,expert_x,expert_y,policy_x,policy_y"]
    for t, (ex, ey), (px, py) in zip(res.times, res.expert_xy, res.policy_xy):
        lines.append(f"{t!r},{ex!r},{ey!r},{px!r},{py!r}")
    atomic_write_bytes(out / "overlay.csv", ("\n".join(lines) + "\n").encode("utf-8"))
    diag = match.meta.arena_diagonal
    summary = (f"match={match.match_id}\nticks={len(res.times)}\n"
               f"mean_displacement_m={res.mean_displacement():.6f}\n"
               f"mean_displacement_first_half_m={res.mean_displacement(0.5):.6f}\n"
               f"arena_diagonal_m={diag:.6f}\n"
               f"first_half_fraction_of_diagonal={res.mean_displacement(0.5) / diag:.6f}\n")
    atomic_write_bytes(out / "overlay_summary.txt", summary.encode("utf-8"))
    if svg:
        arr = match.arrays()
        j = arr.index(agent_id or controlled_agent(match))
        others = np.delete(arr.xy[: len(res.times)], j, axis=1)
        plotting.plot_overlay(res.expert_xy, res.policy_xy, (match.meta.arena_width, match.meta.arena_height),
                              out / "overlay.svg", others, f"{match.match_id}: expert vs policy")
    return res
