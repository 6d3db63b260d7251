import numpy as np
import pytest

from gbmem import bmm
from gbmem.config import dump_config, parse_config
from gbmem.errors import ConfigurationError, EmptyInputError, TaskError
from gbmem.harness import (
    CilScenario,
    RunConfig,
    SynthSpec,
    average_incremental_accuracy,
    load_data,
    make_scenario,
    run,
    sweep_csv,
    sweep_memory,
    synth_dataset,
)
from gbmem.memory import memory_bits_gbm, memory_bits_lr
from gbmem.rng import SeededRng

# a small, well-separated setting that keeps each run well under a second
SMALL = RunConfig(synth_n_classes=10, synth_d=128, synth_n_per_class=200, t=4, init_count=2,
                  synth_base_prob=0.1, synth_alt_prob=0.9, synth_alt_fraction=0.3, epochs=15)


@pytest.fixture(scope="module")
def small_data():
    return load_data(SMALL)


@pytest.fixture(scope="module")
def small_reports(small_data):
    return {m: run(SMALL.replace(method=m), small_data) for m in ("gbm", "lr", "finetune", "joint")}


# -- scenarios ---------------------------------------------------------------


@pytest.mark.parametrize("n, t, init, sizes", [
    (20, 5, 10, [10, 2, 2, 2, 2, 2]),
    (20, 0, 10, [20]),
    (100, 20, 40, [40] + [3] * 20),
])
def test_make_scenario_sizes(n, t, init, sizes):
    sc = make_scenario(n, t, init, seed=3)
    assert [len(s) for s in sc.class_splits] == sizes
    assert sc.t == t
    assert sorted(c for s in sc.class_splits for c in s) == list(range(n))


def test_make_scenario_seeded_shuffle():
    a, b = make_scenario(20, 5, 10, 1), make_scenario(20, 5, 10, 1)
    assert a == b
    assert make_scenario(20, 5, 10, 2) != a
    assert a.seen(1) == list(a.class_splits[0] + a.class_splits[1])


def test_make_scenario_errors():
    with pytest.raises(ConfigurationError):
        make_scenario(20, 3, 10, 0)
    with pytest.raises(ConfigurationError):
        CilScenario(((0, 1), (1, 2)))
    with pytest.raises(ConfigurationError):
        CilScenario(((0,), ()))


# -- synthetic data ------------------------------------------------------------


def test_synth_counts():
    spec = SynthSpec(n_classes=4, d=32, n_per_class=100)
    train, test, protos = synth_dataset(spec, SeededRng(0))
    assert protos.shape == (4, 2, 32)
    assert np.bincount(train.labels).tolist() == [80] * 4
    assert np.bincount(test.labels).tolist() == [20] * 4
    assert train.is_binary and train.dim == 32


def test_synth_deterministic_limit():
    spec = SynthSpec(n_classes=3, modes_per_class=1, d=40, n_per_class=50, base_prob=1e-12, alt_prob=1 - 1e-12)
    train, _, protos = synth_dataset(spec, SeededRng(1))
    bits = train.dense()
    np.testing.assert_array_equal(bits, protos[train.labels, 0] > 0.5)


def test_synth_flip_noise_rate():
    spec = SynthSpec(n_classes=1, modes_per_class=1, d=200, n_per_class=500, base_prob=1e-12,
                     alt_prob=1 - 1e-12, flip_noise=0.1)
    train, _, protos = synth_dataset(spec, SeededRng(2))
    rate = np.mean(train.dense() != (protos[0, 0] > 0.5))
    assert abs(rate - 0.1) < 0.01


def test_synth_spec_validation():
    with pytest.raises(ConfigurationError):
        SynthSpec(flip_noise=0.5)
    with pytest.raises(ConfigurationError):
        SynthSpec(base_prob=0.0)
    with pytest.raises(ConfigurationError):
        SynthSpec(modes_per_class=0)


def test_synth_refit_recovers_prototypes():
    ok = 0
    for seed in range(10):
        spec = SynthSpec(n_classes=1, modes_per_class=2, d=32, n_per_class=2500,
                         base_prob=0.1, alt_prob=0.9, alt_fraction=0.5, seed=seed)
        train, _, protos = synth_dataset(spec, SeededRng(seed))
        params, _ = bmm.fit(train.data, bmm.EmConfig(k=2), SeededRng(seed).child(9))
        perm = bmm.align_components(params.mu, protos[0])
        ok += np.abs(params.mu[perm] - protos[0]).max() <= 0.07
    assert ok >= 9


# -- metrics -------------------------------------------------------------------


def test_average_incremental_accuracy():
    assert average_incremental_accuracy([0.8, 0.7, 0.6]) == pytest.approx(0.7)
    assert average_incremental_accuracy([0.42]) == 0.42
    assert average_incremental_accuracy([0.3] * 6) == pytest.approx(0.3)
    with pytest.raises(EmptyInputError):
        average_incremental_accuracy([])


def test_report_invariants(small_reports):
    for rep in small_reports.values():
        m = rep.acc_matrix
        assert np.all(np.isnan(m[np.triu_indices(len(m), 1)]))
        low = m[np.tril_indices(len(m))]
        assert np.all((low >= 0) & (low <= 1))
        # all-seen accuracy is the count-weighted mean of the row
        for t in range(len(m)):
            w = rep.test_counts[:t + 1]
            assert rep.all_seen[t] == pytest.approx(np.dot(m[t, :t + 1], w) / w.sum(), abs=1e-12)
        assert rep.avg_incremental_accuracy == pytest.approx(np.mean(rep.all_seen))
        assert rep.group_curves["all"] == rep.all_seen
        assert rep.group_curves["past"][0] is None and rep.group_curves["past"][1] is None


def test_report_memory_bits(small_reports):
    assert small_reports["gbm"].memory_bits == memory_bits_gbm(SMALL.k, 128, 10, SMALL.q)
    assert small_reports["lr"].memory_bits == memory_bits_lr(SMALL.lr_e, 128, 10)
    assert small_reports["finetune"].memory_bits == 0


def test_finetune_forgets(small_reports):
    rep = small_reports["finetune"]
    assert rep.acc_matrix[-1, 0] <= 0.2


def test_joint_upper_bounds_finetune(small_reports):
    assert small_reports["joint"].final_accuracy >= small_reports["finetune"].final_accuracy


def test_gbm_beats_finetune(small_reports):
    gap = small_reports["gbm"].avg_incremental_accuracy - small_reports["finetune"].avg_incremental_accuracy
    assert gap >= 0.25


def test_run_reproducible(small_data, small_reports):
    again = run(SMALL.replace(method="gbm"), small_data)
    assert again.to_csv() == small_reports["gbm"].to_csv()


def test_csv_layout(small_reports):
    lines = small_reports["gbm"].to_csv().splitlines()
    assert lines[0] == "task_index,split,accuracy"
    assert lines[1].startswith("0,task_0,")


def test_run_error_carries_task_index(small_data):
    # GBM memory on real-valued data without a binarizer cannot work
    cfg = SMALL.replace(dataset="synth_gaussian")
    with pytest.raises(TaskError) as info:
        run(cfg)
    assert info.value.task_index == 0


def test_run_real_valued_binarizers():
    cfg = SMALL.replace(dataset="synth_gaussian", epochs=10)
    data = load_data(cfg)
    for binarizer in ("thermometer", "heaviside"):
        rep = run(cfg.replace(binarizer=binarizer, therm_p=4), data)
        assert rep.avg_incremental_accuracy > 0.5


# -- sweeps --------------------------------------------------------------------


def test_sweep_lr_memory_column(small_data):
    rows = sweep_memory(SMALL.replace(epochs=2), {"lr_E": [1, 10, 100]}, small_data)
    assert [r[2] for r in rows] == [memory_bits_lr(e, 128, 10) for e in (1, 10, 100)]


def test_sweep_gbm_k_memory_ratio(small_data):
    rows = sweep_memory(SMALL.replace(epochs=2, q=8), {"gbm_K": [4, 1]}, small_data)
    assert [r[1] for r in rows] == [1, 4]
    assert rows[1][2] == 4 * rows[0][2]
    assert sweep_csv(rows).splitlines()[0] == "method,axis_value,memory_bits,avg_acc"


def test_sweep_bad_axis():
    with pytest.raises(ConfigurationError):
        sweep_memory(SMALL, {"gbm_E": [1]})


# -- configuration files -------------------------------------------------------


def test_parse_config_types():
    cfg = parse_config("# comment\nmethod = lr\nlr_e = 7\nem_eps = 0.01\npi_trainable = no\n")
    assert (cfg.method, cfg.lr_e, cfg.em_eps, cfg.pi_trainable) == ("lr", 7, 0.01, False)
    assert parse_config("seed = 3", seed=9).seed == 9


def test_config_roundtrip():
    cfg = RunConfig(method="joint", k=4, synth_flip_noise=0.05)
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text", ["nonsense_key = 1", "k = two", "pi_trainable = maybe", "method = magic"])
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)
