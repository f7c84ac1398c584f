"""Small configurations of every experiment, fast enough for unit tests."""

SMALL = {
    "simulate": {"simulate.n": 32, "simulate.replicas": 4, "simulate.t_end": 0.01, "simulate.snapshots": True},
    "pde": {"pde.m": 32, "pde.t_end": 0.02, "pde.record_every": 5},
    "liouville": {"liouville.m": 16, "liouville.t_end": 0.01, "liouville.output_every": 2},
    "ldp": {
        "ldp.n_values": [16, 32],
        "ldp.p_values": [2, 4],
        "ldp.mc_samples": 2000,
        "ldp.moment_n_values": [100],
        "ldp.moment_samples": 2000,
        "ldp.fixed_point_m": 64,
        "initial.m": 64,
    },
    "converge": {
        "potential.lam": 0.05,
        "potential.sigma": 0.1,
        "converge.n_values": [16, 32, 64],
        "converge.replicas": 16,
        "converge.marginal_M1": 4,
        "converge.marginal_M2": 2,
        "converge.t_end": 0.05,
        "converge.hn_M": 2,
        "initial.m": 64,
    },
    "phase": {
        "potential.d": 2,
        "initial.kind": "bump",
        "initial.m": 16,
        "initial.width": 0.12,
        "phase.threshold": 40.0,
        "phase.lam_values": [0.0, 8.0],
        "phase.m": 16,
        "phase.t_end": 0.3,
        "phase.bisect_steps": 1,
    },
}
