"""Smoke test for the Python bindings.

Build first:
    cargo build --release -p hybrid-ssd-py
    cp target/release/libhybrid_ssd_py.so python/hybrid_ssd_py.so
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import hybrid_ssd_py as h


def main() -> None:
    setup = h.SimSetup.desk()
    config = h.ConfigProfile()
    assert config.get("gc_trigger_threshold") == 6.0
    assert config.get("placement_strategy") == "slc_first"

    trace = h.synth_trace(4000, setup.logical_bytes, seed=2, hot_region_fraction=0.05)
    assert len(trace) == 4000

    sim = h.Simulator(setup, config)
    sim.prefill(0.3)
    before = sim.total_latency
    spent = sum(sim.step(*r) for r in trace[:500])
    assert sim.total_latency - before == spent

    a = h.replay(trace, setup, config, prefill=0.3)
    b = h.replay(trace, setup, config, prefill=0.3)
    assert a == b, "replays are not deterministic"

    tuned = h.replay(
        trace, setup, config, prefill=0.3,
        responses=["New configuration: `1.Placement strategy: Hotness based; 2.Slice size: 1MB`"],
        tuning_interval=1000, investigation_period=1000, max_iterations=1,
    )
    verdict = tuned["history"][0]["verdict"]
    assert verdict in ("Accepted", "Corrected", "RolledBack"), verdict

    parsed = h.parse_config("New configuration: `1.K-means trigger threshold: 1000; 2.Windows size: 1500`")
    assert sorted(parsed["candidates"]) == ["kmeans_trigger_threshold", "window_size"]

    fixed, log = h.correct_mistakes("`1.RL learning rate: 5; 2.Windows size: 1500`", config)
    assert fixed.get("rl_learning_rate") == 1.0 and fixed.get("window_size") == 1500
    assert log and log[0]["param"] == "rl_learning_rate"

    try:
        config.set("gc_granularity", 0)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range set was accepted")

    print(
        "ok:",
        f"default {a['report']['total_execution_time']}us,",
        f"tuned {tuned['report']['total_execution_time']}us ({verdict}),",
        f"accuracy {h.accuracy(tuned['history'])}",
    )


if __name__ == "__main__":
    main()
