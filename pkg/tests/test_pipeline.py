import pytest

from h2sim.errors import ConfigurationError
from h2sim.pipeline import backward_span, schedule_training_step


def test_worked_example():
    rep = schedule_training_step([{"FE": 100, "BE": 150, "WUE": 0}], 4, 4)
    assert rep.total_cycles == 100 + 3 * 150 + 150
    assert rep.sequential_cycles == 4 * 250


def test_single_sub_batch_has_no_overlap():
    rep = schedule_training_step([{"FE": 10, "BE": 20, "WUE": 5}], 4, 1, apply_cycles=7)
    assert rep.total_cycles == rep.sequential_cycles == 10 + 25 + 7


def test_wue_waits_for_be_layer_by_layer():
    span = backward_span([{"FE": 0, "BE": 10, "WUE": 30}, {"FE": 0, "BE": 20, "WUE": 5}])
    # BE: top layer 0..20, bottom 20..30; WUE: top 20..25, bottom 30..60
    assert span.bw == 60


def test_missing_report_is_an_error():
    with pytest.raises(ConfigurationError):
        schedule_training_step([{"FE": 1, "BE": 1}], 4, 1)
    with pytest.raises(ConfigurationError):
        schedule_training_step([[{"FE": 1, "BE": 1, "WUE": 1}]], 4, 2)


def test_utilisation_bounded():
    rep = schedule_training_step([{"FE": 100, "BE": 60, "WUE": 30}], 4, 8, 5)
    assert all(0 <= v <= 1 for v in rep.utilization.values())
    assert rep.speedup_over_sequential >= 1
