"""scikit-learn style wrappers around the posterior engines, decoders and GMI estimators.

Observations are passed as a 2-D complex array ``X``.  Without CSI its
columns are the ``p`` antenna outputs; with CSI the ``p`` CSI columns
(state or received pilot) follow, so ``X`` has ``2p`` columns.  Nothing is
learned from data: ``fit`` builds the channel model and the derived
quantities, and accepts (and ignores) ``X`` so the estimators drop into
pipelines.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import channels as ch
from ._validation import check_complex_array
from .config import build_channel
from .decoder import decode, metrics_all
from .estimators import DEFAULT_QUADRATURE_ORDER, make_engine
from .gmi import DecoderVariant, evaluate_gmis, gnndr_functions
from .mathkernel import Rng


class _ChannelParams(BaseEstimator):
    """Channel parameters shared by every estimator (see :func:`gnndr.config.build_channel`)."""

    def _build(self):
        spec, inp = build_channel(self.channel, self.antennas, self.snr_db, self.input_power, self.quantizer,
                                  self.alpha, self.fading_power, self.fixed_s, self.pilot)
        self.spec_, self.input_ = spec, inp
        self.n_features_in_ = spec.antennas * (1 if spec.variant == ch.LINEAR else 2)
        return spec, inp

    def _split(self, X, V=None):
        p = self.spec_.antennas
        if self.spec_.variant == ch.LINEAR:
            return check_complex_array(X, "X", n_features=p), None
        if V is not None:
            Y = check_complex_array(X, "X", n_features=p)
            V = check_complex_array(V, "V", n_features=p)
            if V.shape[0] != Y.shape[0]:
                raise ValueError("X and V have different numbers of rows")
            return Y, V
        X = check_complex_array(X, "X", n_features=2 * p)
        return X[:, :p], X[:, p:]


class PosteriorEstimator(_ChannelParams):
    """Posterior mean estimator of the channel input.

    Parameters
    ----------
    channel : str
        ``"LinearNoState"``, ``"FadingPerfectCsi"`` or ``"FadingPilotCsi"``
        (short aliases ``linear``, ``fading``, ``pilot`` are accepted).
    antennas : int
    snr_db : float
        ``10 log10(P / sigma2)``.
    input_power : float
    quantizer : str
        ``"none"``, ``"onebit"`` or ``"onebit-dithered"``.
    alpha : float
        Dither scale, used only with the dithered quantizer.
    fading_power : float
    fixed_s : array-like of complex, optional
    pilot : complex, optional
    quadrature_order : int
    """

    def __init__(self, channel="LinearNoState", antennas=1, snr_db=0.0, input_power=1.0, quantizer="none",
                 alpha=0.0, fading_power=1.0, fixed_s=None, pilot=None,
                 quadrature_order=DEFAULT_QUADRATURE_ORDER):
        self.channel = channel
        self.antennas = antennas
        self.snr_db = snr_db
        self.input_power = input_power
        self.quantizer = quantizer
        self.alpha = alpha
        self.fading_power = fading_power
        self.fixed_s = fixed_s
        self.pilot = pilot
        self.quadrature_order = quadrature_order

    def fit(self, X=None, y=None):
        spec, inp = self._build()
        self.engine_ = make_engine(spec, inp, self.quadrature_order)
        return self

    def predict_moments(self, X, V=None):
        """``(mean, second_moment, omega)`` of ``x`` for each row."""
        check_is_fitted(self, "engine_")
        Y, V = self._split(X, V)
        return self.engine_.moments(Y, V)

    def predict(self, X, V=None):
        return self.predict_moments(X, V)[0]

    def predict_omega(self, X, V=None):
        return self.predict_moments(X, V)[2]

    def score(self, X, y, V=None):
        """Negative mean squared error of the posterior mean against the true inputs ``y``."""
        x = np.asarray(y, dtype=complex).ravel()
        err = self.predict(X, V) - x
        return -float(np.mean(np.abs(err) ** 2))


class GnndrDecoder(_ChannelParams, TransformerMixin):
    """Generalized nearest-neighbor decoder of a given variant.

    ``transform`` returns the per-use processed output and scaling,
    ``[g(y, v), f(y, v)]``; ``decision_function`` scores every codeword of a
    codebook against one received block and ``predict`` returns the
    decoded message index (lowest index on ties).

    Parameters
    ----------
    variant : {"opt", "csf", "csi", "lin"}
    n, n_inner : int
        Sample sizes for the auxiliary expectations (``csf`` and ``csi``).
    random_state : int
    Other parameters as in :class:`PosteriorEstimator`.
    """

    def __init__(self, variant="opt", channel="LinearNoState", antennas=1, snr_db=0.0, input_power=1.0,
                 quantizer="none", alpha=0.0, fading_power=1.0, fixed_s=None, pilot=None,
                 quadrature_order=DEFAULT_QUADRATURE_ORDER, n=20_000, n_inner=64, random_state=0):
        self.variant = variant
        self.channel = channel
        self.antennas = antennas
        self.snr_db = snr_db
        self.input_power = input_power
        self.quantizer = quantizer
        self.alpha = alpha
        self.fading_power = fading_power
        self.fixed_s = fixed_s
        self.pilot = pilot
        self.quadrature_order = quadrature_order
        self.n = n
        self.n_inner = n_inner
        self.random_state = random_state

    def fit(self, X=None, y=None):
        spec, inp = self._build()
        engine = make_engine(spec, inp, self.quadrature_order)
        self.variant_ = DecoderVariant.parse(self.variant)
        self.functions_ = gnndr_functions(self.variant_, spec, inp, engine, n=self.n, n_inner=self.n_inner,
                                          rng=Rng(int(self.random_state)))
        return self

    def transform(self, X, V=None):
        check_is_fitted(self, "functions_")
        Y, V = self._split(X, V)
        g, f = self.functions_.pair(Y, V)
        return np.column_stack([g, f])

    def decision_function(self, X, codebook, V=None):
        """Metric ``sum_n |g_n - f_n c_n|^2`` of every codeword (rows of ``codebook``)."""
        gf = self.transform(X, V)
        book = check_complex_array(codebook, "codebook", n_features=gf.shape[0])
        return metrics_all(gf[:, 0], gf[:, 1], book)

    def predict(self, X, codebook, V=None):
        check_is_fitted(self, "functions_")
        Y, V = self._split(X, V)
        book = check_complex_array(codebook, "codebook", n_features=Y.shape[0])
        return decode(self.functions_, (Y, V), book)


class GmiAnalyzer(_ChannelParams):
    """GMI of several decoder variants, estimated from common random draws.

    After ``fit``: ``report_`` (:class:`gnndr.gmi.GmiReport`), ``gmi_``
    (variant name to nats) and ``std_err_``.
    """

    def __init__(self, variants=("opt", "csi", "csf", "lin"), channel="LinearNoState", antennas=1, snr_db=0.0,
                 input_power=1.0, quantizer="none", alpha=0.0, fading_power=1.0, fixed_s=None, pilot=None,
                 quadrature_order=DEFAULT_QUADRATURE_ORDER, n_outer=2000, n_inner=64, random_state=0):
        self.variants = variants
        self.channel = channel
        self.antennas = antennas
        self.snr_db = snr_db
        self.input_power = input_power
        self.quantizer = quantizer
        self.alpha = alpha
        self.fading_power = fading_power
        self.fixed_s = fixed_s
        self.pilot = pilot
        self.quadrature_order = quadrature_order
        self.n_outer = n_outer
        self.n_inner = n_inner
        self.random_state = random_state

    def fit(self, X=None, y=None):
        spec, inp = self._build()
        rep = evaluate_gmis(spec, inp, self.n_outer, self.n_inner, Rng(int(self.random_state)).generator(),
                            self.variants, quadrature_order=self.quadrature_order)
        self.report_ = rep
        self.gmi_ = {v.value: e.nats for v, e in rep.estimates.items()}
        self.std_err_ = {v.value: e.std_err for v, e in rep.estimates.items()}
        return self

    def score(self, X=None, y=None):
        """GMI (nats) of the first listed variant."""
        check_is_fitted(self, "report_")
        return self.gmi_[DecoderVariant.parse(list(self.variants)[0]).value]
