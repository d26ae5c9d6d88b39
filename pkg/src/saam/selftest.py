"""Built-in numerical self-test: gradient checks for every tensor op and
for each encoder/head combination at toy sizes, plus head-oracle
comparisons against brute-force reimplementations.

Used by the command-line ``selftest`` and by the acceptance suite. Each
check returns (name, passed, detail); the whole suite runs in well under
a minute.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoders import EncoderConfig
from .heads import HeadConfig, head_forward
from .model import SaamModel
from .training import TrainConfig, document_loss

TOY_DIMS = {"d": 8, "s_max": 4, "n_aspects": 2, "n_classes": 3}


def _weighted(t, seed):
    w = np.random.default_rng(seed).normal(size=t.shape)
    return ad.reduce_sum(ad.mul(t, ad.constant(w)))


def op_gradcheck_cases():
    """(name, build_loss, params) for every differentiable op."""
    rng = np.random.default_rng(1234)
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4, 2)))
    u = ad.parameter(rng.normal(size=5))
    v = ad.parameter(rng.normal(size=3))
    e1 = ad.parameter(rng.normal(size=(2, 3)))
    e2 = ad.parameter(rng.normal(size=(2, 3)))
    away_from_kink = rng.normal(size=(3, 3)) + np.where(rng.normal(size=(3, 3)) > 0, 2.0, -2.0)
    r = ad.parameter(away_from_kink)
    denom = ad.parameter(np.abs(rng.normal(size=(2, 3))) + 0.5)
    table = ad.parameter(rng.normal(size=(4, 3)))
    m = ad.parameter(rng.normal(size=(3, 4)) * 2.0)
    sc = ad.parameter(rng.normal(size=()) + 3.0)
    return [
        ("matmul", lambda: _weighted(ad.matmul(a, b), 0), {"a": a, "b": b}),
        ("softmax_lastdim", lambda: _weighted(ad.softmax_lastdim(a), 1), {"a": a}),
        ("outer", lambda: _weighted(ad.outer(u, v), 2), {"u": u, "v": v}),
        ("add", lambda: _weighted(ad.add(e1, e2), 3), {"e1": e1, "e2": e2}),
        ("sub", lambda: _weighted(ad.sub(e1, e2), 4), {"e1": e1, "e2": e2}),
        ("mul", lambda: _weighted(ad.mul(e1, e2), 5), {"e1": e1, "e2": e2}),
        ("div", lambda: _weighted(ad.div(e1, denom), 6), {"e1": e1, "denom": denom}),
        ("tanh", lambda: _weighted(ad.tanh(e1), 7), {"e1": e1}),
        ("sigmoid", lambda: _weighted(ad.sigmoid(e1), 8), {"e1": e1}),
        ("relu", lambda: _weighted(ad.relu(r), 9), {"r": r}),
        ("scale", lambda: _weighted(ad.scale(e1, 2.5), 10), {"e1": e1}),
        ("reduce_sum", lambda: _weighted(ad.reduce_sum(a, axis=1), 11), {"a": a}),
        ("reduce_mean", lambda: _weighted(ad.reduce_mean(a, axis=0), 12), {"a": a}),
        ("max_over_axis", lambda: _weighted(ad.max_over_axis(m, 0), 13), {"m": m}),
        ("embedding_lookup", lambda: _weighted(ad.embedding_lookup(table, [2, 0, 2]), 14),
         {"table": table}),
        ("cross_entropy",
         lambda: ad.cross_entropy(ad.reshape(ad.softmax_lastdim(ad.reshape(u, (1, 5))), (5,)), 2),
         {"u": u}),
        ("squared_error", lambda: ad.squared_error(sc, 1.25), {"sc": sc}),
        ("transpose", lambda: _weighted(ad.transpose(a), 15), {"a": a}),
        ("reshape", lambda: _weighted(ad.reshape(a, (2, 6)), 16), {"a": a}),
        ("stack_rows", lambda: _weighted(ad.stack_rows([u, u]), 17), {"u": u}),
        ("slice_rows", lambda: _weighted(ad.slice_rows(a, 1, 3), 18), {"a": a}),
        ("pad_rows", lambda: _weighted(ad.pad_rows(a, 5), 19), {"a": a}),
        ("concat", lambda: _weighted(ad.concat([u, v]), 20), {"u": u, "v": v}),
    ]


def toy_encoder_config(kind: str, vocab_size: int = 12) -> EncoderConfig:
    d = TOY_DIMS["d"]
    if kind == "cnn":
        return EncoderConfig("cnn", vocab_size=vocab_size, embedding_dim=4,
                             cnn_filter_widths=(2, 3), cnn_filters_per_width=d // 2)
    if kind == "gru":
        return EncoderConfig("gru", vocab_size=vocab_size, embedding_dim=4, gru_hidden=d)
    return EncoderConfig("mean", vocab_size=vocab_size, embedding_dim=d)


def toy_train_config(encoder_kind: str, variant: str) -> TrainConfig:
    return TrainConfig(variant=variant, encoder=toy_encoder_config(encoder_kind),
                       n_aspects=TOY_DIMS["n_aspects"], s_max=TOY_DIMS["s_max"],
                       n_classes=TOY_DIMS["n_classes"], t_max=8)


class _ToyDoc:
    def __init__(self, sentences, overall, aspects):
        self.doc_id = "toy"
        self.sentences = sentences
        self.overall_rating = overall
        self.aspect_ratings = aspects


def model_gradcheck(encoder_kind: str, variant: str, seed: int = 0,
                    h: float = 1e-5, tol: float = 1e-4) -> ad.GradCheckReport:
    """Full forward (encoder + head + loss) gradient check at toy dims."""
    config = toy_train_config(encoder_kind, variant)
    model = SaamModel(config.encoder, config.head_config(), seed=seed,
                      t_max=config.t_max)
    rng = np.random.default_rng(seed)
    sentences = [[int(rng.integers(2, 12)) for _ in range(int(rng.integers(3, 6)))]
                 for _ in range(3)]
    if model.kind == "classification":
        doc = _ToyDoc(sentences, 2.0, [1.0, 3.0])
    else:
        doc = _ToyDoc(sentences, 2.5, [1.5, 3.5])

    def build():
        preds, _ = model.forward(doc.sentences)
        return document_loss(model, preds, doc, config)

    return ad.grad_check(build, model.params, h=h, tol=tol)


def _np_softmax(x):
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _loop_oracle(u_rows, params, config: HeadConfig):
    """Brute-force head forward: explicit loops, no outer-product shortcut."""
    n = len(u_rows)
    k = config.n_attribution_slots
    w_s, b_s = params["head.w_score"].data, params["head.b_score"].data
    w_a, b_a = params["head.w_attr"].data, params["head.b_attr"].data
    if config.is_classification:
        sums = np.zeros((k, config.n_classes))
        for i in range(n):
            score_i = u_rows[i] @ w_s + b_s
            aspect_i = _np_softmax(u_rows[i] @ w_a + b_a)
            for j in range(k):
                for c in range(config.n_classes):
                    sums[j, c] += aspect_i[j] * score_i[c]
        dists = np.stack([_np_softmax(sums[j]) for j in range(k)])
        if config.variant == "C1":
            flat = np.zeros(config.s_max * config.feature_dim)
            flat[:n * config.feature_dim] = np.concatenate(u_rows)
            overall = _np_softmax(flat @ params["head.w_overall"].data
                                  + params["head.b_overall"].data[0])
        else:
            overall = dists[config.n_aspects]
        return overall, [dists[j] for j in range(config.n_aspects)]
    per_aspect = []
    scores = [float(u_rows[i] @ w_s[:, 0] + b_s[0]) for i in range(n)]
    weights = [_np_softmax(u_rows[i] @ w_a + b_a) for i in range(n)]
    for j in range(config.n_aspects):
        num = sum(weights[i][j] * scores[i] for i in range(n))
        den = sum(weights[i][j] for i in range(n)) + config.epsilon
        per_aspect.append(num / den)
    total = sum(float(params["head.w_overall"].data[i] @ u_rows[i]) for i in range(n))
    overall = (total + float(params["head.b_overall"].data)) / n
    return overall, per_aspect


def head_oracle_check(variant: str, instances: int = 25, seed: int = 0,
                      tol: float = 1e-12):
    """Compare the head against its brute-force oracle on random inputs."""
    from .encoders import SentenceEmbeddingMatrix
    from .heads import init_head_params

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        config = HeadConfig(variant, n_aspects=2, feature_dim=5, s_max=4, n_classes=3)
        params = init_head_params(config, rng)
        for p in params.values():
            p.data[...] = rng.normal(scale=0.8, size=p.shape)
        n = int(rng.integers(1, 5))
        rows = rng.normal(size=(n, 5))
        values = np.zeros((4, 5))
        values[:n] = rows
        u = SentenceEmbeddingMatrix(ad.constant(values), [True] * n + [False] * (4 - n))
        with ad.Graph():
            preds, _ = head_forward(u, params, config)
        overall, per_aspect = _loop_oracle([rows[i] for i in range(n)], params, config)
        if config.is_classification:
            worst = max(worst, float(np.max(np.abs(preds.overall.data - overall))))
            for got, want in zip(preds.per_aspect, per_aspect):
                worst = max(worst, float(np.max(np.abs(got.data - want))))
        else:
            worst = max(worst, abs(float(preds.overall.data) - overall))
            for got, want in zip(preds.per_aspect, per_aspect):
                worst = max(worst, abs(float(got.data) - want))
    return bool(worst <= tol), float(worst)


def run_selftest(corrupt_op: str | None = None):
    """Run every check; returns a list of (name, passed, detail) tuples.

    ``corrupt_op`` deliberately breaks one op's backward rule for the
    duration of the run, to prove the harness catches bad gradients.
    """
    results = []
    restore = None
    if corrupt_op is not None:
        original = getattr(ad, corrupt_op)

        def corrupted(x):
            out = original(x)  # correct forward, wrong backward: drop the entry
            if out.graph is not None and out.graph.ops and out.graph.ops[-1][0] is out:
                out.graph.ops[-1] = (out, lambda _out: None)
            return out

        setattr(ad, corrupt_op, corrupted)
        restore = (corrupt_op, original)
    try:
        for name, build, params in op_gradcheck_cases():
            report = ad.grad_check(build, params)
            results.append((f"op:{name}", report.passed,
                            f"max rel err {report.max_rel_error:.2e}"))
        for encoder_kind in ("cnn", "gru"):
            for variant in ("C1", "C2", "R"):
                report = model_gradcheck(encoder_kind, variant)
                results.append((f"model:{encoder_kind}+{variant}", report.passed,
                                f"max rel err {report.max_rel_error:.2e}"))
        for variant in ("C1", "C2", "R"):
            ok, worst = head_oracle_check(variant)
            results.append((f"oracle:{variant}", ok, f"max abs diff {worst:.2e}"))
    finally:
        if restore is not None:
            setattr(ad, restore[0], restore[1])
    return results
