import numpy as np
import pytest

from qlsacd.lsdist import Family, GeneratorSpec

# one representative spec per family, used by sweep-style tests
FAMILY_EXAMPLES = (
    GeneratorSpec(Family.LOG_NORMAL),
    GeneratorSpec(Family.LOG_STUDENT_T, (5.0,)),
    GeneratorSpec(Family.LOG_POWER_EXPONENTIAL, (0.4,)),
    GeneratorSpec(Family.LOG_HYPERBOLIC, (2.0,)),
    GeneratorSpec(Family.LOG_SLASH, (1.5,)),
    GeneratorSpec(Family.LOG_CONTAMINATED_NORMAL, (0.3, 0.5)),
    GeneratorSpec(Family.EXTENDED_BS, (1.2,)),
    GeneratorSpec(Family.EXTENDED_BS_T, (0.9, 5.0)),
)

# extra-parameter sampling ranges that keep every kernel well inside its domain
_EXTRA_RANGES = {
    Family.LOG_NORMAL: (),
    Family.LOG_STUDENT_T: ((1.5, 25.0),),
    Family.LOG_POWER_EXPONENTIAL: ((-0.8, 0.8),),
    Family.LOG_HYPERBOLIC: ((0.3, 6.0),),
    Family.LOG_SLASH: ((0.6, 6.0),),
    Family.LOG_CONTAMINATED_NORMAL: ((0.05, 0.95), (0.05, 0.95)),
    Family.EXTENDED_BS: ((0.3, 4.0),),
    Family.EXTENDED_BS_T: ((0.3, 3.0), (2.0, 20.0)),
}


def random_generator_spec(rng: np.random.Generator, family: Family) -> GeneratorSpec:
    extra = tuple(rng.uniform(lo, hi) for lo, hi in _EXTRA_RANGES[family])
    return GeneratorSpec(family, extra)


@pytest.fixture
def rng():
    return np.random.default_rng(20230815)


def make_tick_csv(path, n_events=600, seed=7, session_hours=6.5):
    """Synthetic tick file whose every tick is a price event at tiny kappa."""
    from qlsacd.acd import AcdModelSpec, AcdParams, simulate

    rng = np.random.default_rng(seed)
    spec = AcdModelSpec(1, 1, 0.5, GeneratorSpec(Family.LOG_NORMAL))
    params = AcdParams(0.25, 0.20, (0.70,), (0.10,))
    base = simulate(spec, params, n_events, seed=rng)
    # scale the base so the session roughly spans the requested hours
    base *= session_hours * 3600.0 / (1.3 * np.sum(base))

    def factor(t):
        h = t / 3600.0
        return 0.55 + 0.12 * (h - session_hours / 2.0) ** 2

    t = 0.0
    times = [0.0]
    for i in range(n_events):
        t += base[i] * factor(t)
        times.append(t)
    times = np.asarray(times)
    mids = np.round(100.0 * np.exp(np.cumsum(rng.normal(0.0, 2.5e-4, size=n_events + 1))), 6)
    t0 = np.datetime64("2023-08-15T09:30:00.000000000")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp,bid,ask\n")
        for i in range(n_events + 1):
            ts = t0 + np.timedelta64(int(round(times[i] * 1e9)), "ns")
            fh.write(
                f"{np.datetime_as_string(ts, unit='ns')},"
                f"{mids[i] - 0.005:.6f},{mids[i] + 0.005:.6f}\n"
            )
    return path
