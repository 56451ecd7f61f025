"""Output layers: next-token probabilities and loss gradients.

Logits are ``h @ U + s @ V``.  The full softmax normalizes over the
whole vocabulary; the hierarchical variant factors the probability into
a class term and a within-class term

    P(w) = P(class(w) | h, s) * P(w | class(w), h, s)

where the class term has its own small matrices (``class_U``,
``class_V``) and the within-class term reuses the columns of U and V
belonging to the target's class, so one call costs O(K + |class|)
instead of O(d).  Both factors condition on h and s.

Losses are negative log likelihoods in nats.  Loss functions return
``(nll, grads, dh, ds)`` with ``grads`` keyed like the parameter dict;
inputs are batched row-wise.
"""

from __future__ import annotations

import numpy as np

from .corpus import ClassLayout


def _row_softmax_nll(logits, targets):
    """Per-row nll and softmax probabilities via logsumexp."""
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    rows = np.arange(logits.shape[0])
    nll = np.log(z) - shifted[rows, targets]
    return nll, e / z[:, None]


def full_softmax_probs(h, s, params):
    """Full next-token distribution, one row per stream."""
    logits = h @ params["U"] + s @ params["V"]
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def full_softmax_nll(h, s, params, targets):
    """Forward-only nll of the full softmax (evaluation path)."""
    logits = h @ params["U"] + s @ params["V"]
    nll, _ = _row_softmax_nll(logits, np.asarray(targets))
    return nll


def full_softmax_loss(h, s, params, targets):
    """nll plus exact gradients w.r.t. U, V, h and s."""
    targets = np.asarray(targets)
    logits = h @ params["U"] + s @ params["V"]
    nll, probs = _row_softmax_nll(logits, targets)
    dlogits = probs
    dlogits[np.arange(len(targets)), targets] -= 1.0
    grads = {"U": h.T @ dlogits, "V": s.T @ dlogits}
    dh = dlogits @ params["U"].T
    ds = dlogits @ params["V"].T
    return nll, grads, dh, ds


def _class_forward(h, s, params):
    return h @ params["class_U"] + s @ params["class_V"]


def hsm_nll(h, s, params, layout: ClassLayout, targets):
    """Forward-only nll of the factored softmax."""
    targets = np.asarray(targets)
    class_logits = _class_forward(h, s, params)
    cls = layout.class_of[targets]
    nll, _ = _row_softmax_nll(class_logits, cls)
    u, v = params["U"], params["V"]
    within = layout.within_class_index[targets]
    # batch streams sharing a target class through one matmul each
    for cid in np.unique(cls):
        idx = np.flatnonzero(cls == cid)
        members = layout.class_members[cid]
        wlogits = h[idx] @ u[:, members] + s[idx] @ v[:, members]
        wnll, _ = _row_softmax_nll(wlogits, within[idx])
        nll[idx] += wnll
    return nll


def hsm_loss(h, s, params, layout: ClassLayout, targets):
    """nll plus exact gradients for the factored softmax.

    Gradient keys: class_U, class_V, U, V.  U and V receive updates only
    in the columns of the targets' classes.
    """
    targets = np.asarray(targets)
    n = len(targets)
    class_logits = _class_forward(h, s, params)
    cls = layout.class_of[targets]
    nll, cprobs = _row_softmax_nll(class_logits, cls)
    dclass = cprobs
    dclass[np.arange(n), cls] -= 1.0

    u, v = params["U"], params["V"]
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    dh = dclass @ params["class_U"].T
    ds = dclass @ params["class_V"].T
    within = layout.within_class_index[targets]
    for cid in np.unique(cls):
        idx = np.flatnonzero(cls == cid)
        members = layout.class_members[cid]
        uc = u[:, members]
        vc = v[:, members]
        wlogits = h[idx] @ uc + s[idx] @ vc
        wnll, wprobs = _row_softmax_nll(wlogits, within[idx])
        nll[idx] += wnll
        dlogits = wprobs
        dlogits[np.arange(len(idx)), within[idx]] -= 1.0
        du[:, members] += h[idx].T @ dlogits
        dv[:, members] += s[idx].T @ dlogits
        dh[idx] += dlogits @ uc.T
        ds[idx] += dlogits @ vc.T
    grads = {"U": du, "V": dv, "class_U": h.T @ dclass, "class_V": s.T @ dclass}
    return nll, grads, dh, ds


def hsm_full_distribution(h, s, params, layout: ClassLayout):
    """Explicit O(d) enumeration of the factored distribution.

    ``h`` and ``s`` are single state vectors; returns a length-d
    probability vector (diagnostic / evaluation cross-check).
    """
    h = np.asarray(h)
    s = np.asarray(s)
    class_logits = h @ params["class_U"] + s @ params["class_V"]
    cshift = class_logits - class_logits.max()
    ce = np.exp(cshift)
    cprobs = ce / ce.sum()
    d = params["U"].shape[1]
    out = np.empty(d, dtype=np.float64)
    for cid, members in enumerate(layout.class_members):
        wlogits = h @ params["U"][:, members] + s @ params["V"][:, members]
        we = np.exp(wlogits - wlogits.max())
        out[members] = cprobs[cid] * (we / we.sum())
    return out
