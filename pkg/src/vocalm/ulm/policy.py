"""Inference-time context restriction: a recent window plus optional
preservation of the first one or five tokens."""

from __future__ import annotations

from dataclasses import dataclass

KEEP_FIRST_CHOICES = (0, 1, 5)


@dataclass(frozen=True)
class ContextPolicy:
    """window=None means unlimited; keep_first re-exposes early positions."""

    window: int | None = None
    keep_first: int = 0

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise ValueError(f"context window must be >= 1, got {self.window}")
        if self.keep_first not in KEEP_FIRST_CHOICES:
            raise ValueError(
                f"keep_first must be one of {KEEP_FIRST_CHOICES}, got {self.keep_first}"
            )
        if self.window is not None and self.keep_first > self.window:
            raise ValueError("keep_first cannot exceed the context window")

    def is_unlimited(self) -> bool:
        return self.window is None


UNLIMITED = ContextPolicy()


def ngram_context(tokens, t: int, ctx_len: int, bos: int, cp: ContextPolicy | None):
    """Visible n-gram context (as a tuple) for predicting position t.

    With no policy (or a window covering the whole history) this is the usual
    BOS-padded last `ctx_len` symbols. A finite window keeps positions
    {t-window .. t-1} plus the first keep_first positions; an n-gram can only
    condition on a contiguous suffix, so kept-first tokens take effect exactly
    when the window reaches them (keep_first is a no-op beyond the order), and
    otherwise the context truncates to the window itself.
    """
    if ctx_len == 0:
        return ()
    if cp is None or cp.window is None or t - cp.window <= cp.keep_first:
        padded = [bos] * ctx_len + [int(x) for x in tokens[:t]]
        return tuple(padded[-ctx_len:])
    visible = [int(x) for x in tokens[t - cp.window : t]]
    return tuple(visible[-ctx_len:])
