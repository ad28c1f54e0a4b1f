import numpy as np
import pytest

from smseg import metrics as M


def _cfg(n=3, seen=(0, 1), unseen=(2,), ignore=255):
    return M.EvalConfig(num_classes=n, seen_ids=seen, unseen_ids=unseen,
                        ignore_id=ignore)


def test_confusion_diagonal_on_perfect_prediction():
    gt = np.array([[0, 1], [2, 1]])
    cm = M.confusion_matrix(gt, gt, _cfg())
    assert np.array_equal(cm, np.diag([1, 2, 1]))


def test_confusion_all_ignored():
    gt = np.full((3, 3), 255)
    cm = M.confusion_matrix(np.zeros((3, 3), dtype=int), gt, _cfg())
    assert cm.sum() == 0


def test_confusion_hand_count():
    gt = np.array([[0, 0, 1], [1, 2, 2], [255, 2, 0]])
    pred = np.array([[0, 1, 1], [1, 2, 0], [0, 2, 0]])
    cm = M.confusion_matrix(pred, gt, _cfg())
    expect = np.zeros((3, 3), dtype=np.int64)
    expect[0, 0] = 2; expect[0, 1] = 1
    expect[1, 1] = 2
    expect[2, 2] = 2; expect[2, 0] = 1
    assert np.array_equal(cm, expect)


def test_confusion_out_of_range():
    with pytest.raises(ValueError):
        M.confusion_matrix(np.array([[5]]), np.array([[0]]), _cfg())
    with pytest.raises(ValueError):
        M.confusion_matrix(np.array([[0]]), np.array([[7]]), _cfg())


def test_subset_miou_cases():
    gt = np.array([[0, 0], [1, 1]])
    cm = M.confusion_matrix(gt, gt, _cfg())
    assert M.subset_miou(cm, [0, 1]) == 1.0
    # class 2 absent from gt and pred: excluded from the mean
    assert M.subset_miou(cm, [0, 1, 2]) == 1.0
    # class present in gt but never predicted contributes 0
    pred = np.array([[0, 0], [0, 0]])
    cm2 = M.confusion_matrix(pred, gt, _cfg())
    assert abs(M.subset_miou(cm2, [1]) - 0.0) < 1e-12
    assert abs(M.subset_miou(cm2, [0, 1]) - 0.25) < 1e-12   # iou0 = 0.5
    with pytest.raises(ValueError):
        M.subset_miou(cm, [])


def test_subset_miou_hand_two_class():
    gt = np.array([0, 0, 1, 1, 1, 1])
    pred = np.array([0, 1, 1, 1, 0, 1])
    cm = M.confusion_matrix(pred.reshape(2, 3), gt.reshape(2, 3), _cfg())
    iou0 = 1.0 / 3.0          # tp 1, fp 1, fn 1
    iou1 = 3.0 / 5.0          # tp 3, fp 1, fn 1
    assert abs(M.subset_miou(cm, [0, 1]) - (iou0 + iou1) / 2) < 1e-12


def test_hiou_published_anchor_pairs():
    assert abs(M.hiou(87.7, 83.1) - 85.3) <= 0.05
    assert abs(M.hiou(42.6, 42.4) - 42.5) <= 0.05


def test_hiou_identities():
    for x in (0.0, 12.5, 100.0):
        assert M.hiou(x, x) == x
    assert M.hiou(0.0, 0.0) == 0.0
    assert M.hiou(3.0, 5.0) == M.hiou(5.0, 3.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(0, 100, 2)
        assert M.hiou(a, b) <= (a + b) / 2 + 1e-12
    with pytest.raises(ValueError):
        M.hiou(-1.0, 5.0)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        M.EvalConfig(num_classes=3, seen_ids=(0, 1), unseen_ids=(1,))
    with pytest.raises(ValueError):
        M.EvalConfig(num_classes=3, seen_ids=(0, 5), unseen_ids=())
    with pytest.raises(ValueError):
        M.EvalConfig(num_classes=3, seen_ids=(0,), unseen_ids=(1,), ignore_id=2)


def test_evaluate_percent_report():
    gt = np.array([[0, 1], [2, 2]])
    report = M.evaluate(gt, gt, _cfg(), percent=True)
    assert report.siou == 100.0 and report.uiou == 100.0 and report.hiou == 100.0
    d = report.to_dict()
    assert d["scale"] == "percent"
    assert d["per_class_iou"] == [100.0, 100.0, 100.0]
    frac = M.evaluate(gt, gt, _cfg(), percent=False)
    assert frac.hiou == 1.0


def test_evaluate_flags_absent_classes():
    gt = np.array([[0, 0], [0, 0]])
    report = M.evaluate(gt, gt, _cfg())
    assert np.isnan(report.per_class_iou[1])
    assert report.to_dict()["per_class_iou"][1] is None
