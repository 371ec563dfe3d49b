"""Closed-loop rollouts, navigation metrics, overhead benchmark and the share probe."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .inference import SecureClassifier
from .model import NavModel, map_input
from .mpc import Engine
from .nn import Network, forward
from .render import AGENT_CAMERA, N_CAMERAS, lane_cells, render_u8
from .ring import DEFAULT_FIXED, FixedConfig, encode_fixed, to_signed
from .rng import RingRNG
from .sharing import share_arith
from .world import (CRASH_OBSTACLE, CRASH_WALL, FACING_ACTION, MAX_STEPS, MOVED, NORTH, REACHED_GOAL, STOP,
                    WEST, WorldState, best_action, classify_detour, generate_world, is_road, neighbor,
                    optimal_length, step)

OUTCOMES = ("success", "crash_obstacle", "crash_wall", "no_crash_failure")
_OUTCOME_OF = {REACHED_GOAL: "success", CRASH_OBSTACLE: "crash_obstacle", CRASH_WALL: "crash_wall"}


@dataclass(frozen=True)
class RolloutResult:
    outcome: str
    path_length: int
    optimal_length: int
    detour_required: bool
    actions: tuple = ()

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def efficient(self) -> bool:
        return self.success and self.path_length == self.optimal_length


# -- policies ---------------------------------------------------------------

class Policy:
    """Maps the current worlds of a batch of episodes to actions."""

    name = "policy"

    def reset(self, worlds: list[WorldState]):
        pass

    def act(self, worlds: list[WorldState], ids: list[int]) -> np.ndarray:
        raise NotImplementedError


class OraclePolicy(Policy):
    name = "oracle"

    def act(self, worlds, ids):
        return np.array([best_action(w) for w in worlds], dtype=np.int64)


class StopPolicy(Policy):
    name = "always_stop"

    def act(self, worlds, ids):
        return np.full(len(worlds), STOP, dtype=np.int64)


def visible_obstacles(world: WorldState) -> set:
    """Obstacle cells in the agent's own view (the lane ahead, up to the first wall)."""
    cells, _, _ = lane_cells(world, AGENT_CAMERA)
    seen = set()
    for c in cells:
        if not is_road(world.layout, c):
            break
        if c in world.obstacle_cells:
            seen.add(c)
    return seen


def random_walk_moves(world: WorldState) -> list[int]:
    """Moves onto road cells that the agent cannot see to be blocked."""
    seen = visible_obstacles(world)
    return [a for a in range(NORTH, WEST + 1)
            if is_road(world.layout, neighbor(world.agent, a)) and neighbor(world.agent, a) not in seen]


class RandomWalkPolicy(Policy):
    """Clash-free random walk: never enters a wall or a visible obstacle, stops on the goal."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rngs: list = []

    def reset(self, worlds):
        self._rngs = [np.random.default_rng([self.seed, i]) for i in range(len(worlds))]

    def choose(self, world: WorldState, rng: np.random.Generator) -> int:
        if world.agent == world.goal:
            return STOP
        moves = random_walk_moves(world)
        return STOP if not moves else int(moves[int(rng.integers(len(moves)))])

    def act(self, worlds, ids):
        return np.array([self.choose(w, self._rngs[i]) for w, i in zip(worlds, ids)], dtype=np.int64)


class LearnedPolicy(Policy):
    """Trained model in plaintext (``real``/``fixed``) or secret-shared (``mpc``) mode.

    Camera features are encoded once per episode by their owners (the cameras
    are static); the agent re-encodes its own view and map every step.
    """

    def __init__(self, model: NavModel, mode: str = "real", engine: Engine | None = None,
                 cfg: FixedConfig = DEFAULT_FIXED, name: str | None = None):
        if mode not in ("real", "fixed", "mpc"):
            raise ValueError(f"mode must be real, fixed or mpc, got {mode!r}")
        if mode == "mpc" and engine is None:
            raise ValueError("mpc mode needs an engine")
        self.model, self.mode, self.engine, self.cfg = model, mode, engine, cfg
        self.name = name or f"learned_{mode}"
        self.secure = SecureClassifier(model.g, cfg) if mode == "mpc" else None
        self.infer_seconds = 0.0
        self.infer_rows = 0
        self._cams = None

    def reset(self, worlds):
        cams = np.stack([np.stack([render_u8(w, c) for c in range(N_CAMERAS)]) for w in worlds])
        self._cams = self.model.camera_features(cams)

    def features(self, worlds, ids) -> np.ndarray:
        views = np.stack([render_u8(w, AGENT_CAMERA) for w in worlds])
        maps = np.stack([map_input(w) for w in worlds])
        return self.model.features(self._cams[np.asarray(ids)], views, maps)

    def act(self, worlds, ids):
        feats = self.features(worlds, ids)
        t0 = time.perf_counter()
        if self.mode == "mpc":
            out = self.secure.predict(self.engine, feats)
        else:
            out = self.model.logits(feats, self.mode, self.cfg).argmax(axis=1)
        self.infer_seconds += time.perf_counter() - t0
        self.infer_rows += len(worlds)
        return np.asarray(out, dtype=np.int64)


# -- rollouts ---------------------------------------------------------------

def rollout_batch(policy: Policy, worlds: list[WorldState], max_steps: int = MAX_STEPS,
                  detour: list[bool] | None = None) -> list[RolloutResult]:
    """Run every episode in lockstep (one policy call per step for all live episodes)."""
    n = len(worlds)
    policy.reset(worlds)
    cur = list(worlds)
    outcome: list = [None] * n
    moves = [0] * n
    acts: list[list[int]] = [[] for _ in range(n)]
    for _ in range(max_steps):
        alive = [i for i in range(n) if outcome[i] is None]
        if not alive:
            break
        chosen = policy.act([cur[i] for i in alive], alive)
        for i, a in zip(alive, chosen):
            w, res = step(cur[i], int(a))
            acts[i].append(int(a))
            if res == MOVED:
                cur[i] = w
                moves[i] += 1
            else:
                outcome[i] = _OUTCOME_OF.get(res, "no_crash_failure")
    detour = [classify_detour(w) for w in worlds] if detour is None else detour
    return [RolloutResult(outcome[i] or "no_crash_failure", moves[i], optimal_length(worlds[i]),
                          bool(detour[i]), tuple(acts[i])) for i in range(n)]


def rollout(policy: Policy, world: WorldState, max_steps: int = MAX_STEPS) -> RolloutResult:
    return rollout_batch(policy, [world], max_steps)[0]


# -- metrics ----------------------------------------------------------------

def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class MetricsReport:
    name: str
    trials: int
    counts: dict                  # outcome -> count
    strata: dict                  # "detour"/"no_detour" -> (trials, successes, efficient successes)
    seconds_per_inference: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def successes(self) -> int:
        return self.counts["success"]

    @property
    def success_rate(self) -> float:
        return _rate(self.successes, self.trials)

    def stratum_rate(self, key: str) -> float:
        t, s, _ = self.strata[key]
        return _rate(s, t)

    @property
    def efficiency(self) -> float:
        eff = sum(v[2] for v in self.strata.values())
        return _rate(eff, self.successes)

    def stratum_efficiency(self, key: str) -> float:
        _, s, e = self.strata[key]
        return _rate(e, s)

    def fields(self, timing: bool = False) -> dict:
        out = {
            "name": self.name,
            "trials": self.trials,
            "success": f"{self.success_rate:.4f}",
            "success_detour": f"{self.stratum_rate('detour'):.4f}",
            "success_no_detour": f"{self.stratum_rate('no_detour'):.4f}",
        }
        out.update({("successes" if k == "success" else k): self.counts[k] for k in OUTCOMES})
        out.update({
            "efficiency": f"{self.efficiency:.4f}",
            "efficiency_detour": f"{self.stratum_efficiency('detour'):.4f}",
            "efficiency_no_detour": f"{self.stratum_efficiency('no_detour'):.4f}",
        })
        out.update(self.extra)
        if timing and self.seconds_per_inference is not None:
            out["seconds_per_inference"] = f"{self.seconds_per_inference:.6g}"
        return out

    def to_line(self, timing: bool = False) -> str:
        """Machine-readable ``key=value`` line; timing is opt-in so reports stay reproducible."""
        return " ".join(f"{k}={v}" for k, v in self.fields(timing).items())


def summarize(name: str, results: list[RolloutResult], seconds: float | None = None) -> MetricsReport:
    counts = {k: 0 for k in OUTCOMES}
    strata = {"detour": [0, 0, 0], "no_detour": [0, 0, 0]}
    for r in results:
        counts[r.outcome] += 1
        s = strata["detour" if r.detour_required else "no_detour"]
        s[0] += 1
        s[1] += r.success
        s[2] += r.efficient
    return MetricsReport(name, len(results), counts, {k: tuple(v) for k, v in strata.items()}, seconds)


def evaluate(policy: Policy, worlds: list[WorldState], detour: list[bool] | None = None,
             max_steps: int = MAX_STEPS) -> tuple[MetricsReport, list[RolloutResult]]:
    results = rollout_batch(policy, worlds, max_steps, detour)
    seconds = None
    if isinstance(policy, LearnedPolicy) and policy.infer_rows:
        seconds = policy.infer_seconds / policy.infer_rows
    return summarize(policy.name, results, seconds), results


def format_table(reports: list[MetricsReport]) -> str:
    """Human-readable comparison, one row per policy."""
    head = f"{'model':<22}{'detour':>9}{'no detour':>11}{'overall':>9}{'crash obs':>11}{'crash wall':>11}" \
           f"{'no crash':>10}{'efficiency':>12}"
    rows = [head, "-" * len(head)]
    for r in reports:
        rows.append(f"{r.name:<22}{r.stratum_rate('detour'):>9.1%}{r.stratum_rate('no_detour'):>11.1%}"
                    f"{r.success_rate:>9.1%}{r.counts['crash_obstacle']:>11}{r.counts['crash_wall']:>11}"
                    f"{r.counts['no_crash_failure']:>10}{r.efficiency:>12.1%}")
    return "\n".join(rows)


def path_length_histogram(results: list[RolloutResult]) -> str:
    """CSV with success/failure counts per optimal path length."""
    buckets: dict[int, list[int]] = {}
    for r in results:
        b = buckets.setdefault(r.optimal_length, [0, 0])
        b[0 if r.success else 1] += 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["optimal_length", "successes", "failures"])
    for k in sorted(buckets):
        w.writerow([k, *buckets[k]])
    return buf.getvalue()


def action_agreement(a: list[RolloutResult], b: list[RolloutResult]) -> float:
    """Fraction of episodes whose whole action sequences coincide."""
    if len(a) != len(b):
        raise ValueError("result lists differ in length")
    return float(np.mean([x.actions == y.actions for x, y in zip(a, b)])) if a else 1.0


# -- overhead benchmark -----------------------------------------------------

def bench_inference(g: Network, batch: int = 100, parties=(2, 5), repeats: int = 3, plain_repeats: int = 200,
                    seed: int = 0, cfg: FixedConfig = DEFAULT_FIXED) -> dict:
    """Median seconds per forward pass on a feature batch.  Dealing is excluded from the timing."""
    feats = np.random.default_rng(seed).uniform(-1, 1, (batch, g.layers[0].in_features))
    out = {}
    times = []
    for _ in range(plain_repeats):
        t0 = time.perf_counter()
        forward(g, feats).argmax(axis=1)
        times.append(time.perf_counter() - t0)
    out["plain"] = float(np.median(times))
    secure = SecureClassifier(g, cfg)
    for P in parties:
        engine = Engine(P, cfg, seed=seed)
        times = []
        for _ in range(repeats):
            engine.begin(secure.budget(batch, P))
            t0 = time.perf_counter()
            x = secure.share_inputs(engine, feats)
            engine.argmax_reveal(secure.logits_shared(engine, x))
            times.append(time.perf_counter() - t0)
            engine.end()
        out[f"mpc{P}"] = float(np.median(times))
    return out


# -- share indistinguishability probe ---------------------------------------

def camera_sees_obstacle(world: WorldState, cam: int) -> bool:
    cells, _, _ = lane_cells(world, cam)
    for c in cells:
        if not is_road(world.layout, c):
            return False
        if c in world.obstacle_cells:
            return True
    return False


def attack_dataset(model: NavModel, n_worlds: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (camera feature, obstacle-in-view) pairs from fresh worlds."""
    imgs, labels = [], []
    for i in range(n_worlds):
        w = generate_world((int(seed) << 40) | (2 << 36) | i)
        for c in range(N_CAMERAS):
            imgs.append(render_u8(w, c))
            labels.append(camera_sees_obstacle(w, c))
    labels = np.array(labels)
    rng = np.random.default_rng([seed, 3])
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    k = min(len(pos), len(neg))
    keep = np.sort(np.concatenate([rng.choice(pos, k, replace=False), rng.choice(neg, k, replace=False)]))
    feats = forward(model.view, np.stack([imgs[i] for i in keep]) / 255.0)
    return feats, labels[keep].astype(np.int64)


def normalized_share(feats: np.ndarray, seed: int = 0, P: int = 2, cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
    """Party 0's additive share of the encoded features, read as a signed real and scaled into [-1, 1]."""
    shares = share_arith(encode_fixed(feats, cfg), P, RingRNG(seed, "attack"))
    return to_signed(shares[0].payload).astype(np.float64) / 2.0 ** 63


def privacy_attack(x: np.ndarray, labels: np.ndarray, seed: int = 0, test_frac: float = 0.3) -> float:
    """Held-out accuracy of a logistic-regression probe; inputs are rescaled into [-1, 1]."""
    from sklearn.linear_model import LogisticRegression

    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.random.default_rng([seed, 4]).permutation(len(labels))
    n_test = int(round(len(labels) * test_frac))
    test, train = order[:n_test], order[n_test:]
    scale = np.abs(x[train]).max()
    x = x / (scale if scale > 0 else 1.0)
    clf = LogisticRegression(max_iter=2000)
    clf.fit(x[train], labels[train])
    return float((clf.predict(x[test]) == labels[test]).mean())
