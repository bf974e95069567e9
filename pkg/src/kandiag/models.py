"""Diagnostic functions: traditional models, neural models, and their
spline-activation (KAN) counterparts, including the two-level aggregation
variants that process embeddings entirely through KANs.

Every model maps a (student, exercise) pair to a correctness probability
through three feature vectors: the student embedding, the exercise
embedding, and the concept embedding derived from the exercise's row of
the exercise-concept matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, IdLookupError, IntegrityError
from .kan import KanLayer, KanNetwork, SplineGrid, basis_values

VARIANTS = (
    "IRT", "MIRT", "DINA", "MF",
    "NCD", "NCDplus", "KSCD", "KSCDplus", "RCD", "RCDplus",
    "KaNCD", "KaNCDplus", "KA2NCDe", "KA2NCDkan",
)

# variants whose diagnostic function multiplies by the concept vector as a
# mask; these keep the concept embedding non-negative so masking semantics
# and the monotone-response probe stay meaningful
_MASK_VARIANTS = ("NCD", "NCDplus", "KSCD", "KSCDplus", "KaNCD", "KaNCDplus")


@dataclass
class ForwardTrace:
    """Named intermediates captured during one forward pass."""

    values: dict[str, np.ndarray] = field(default_factory=dict)

    def record(self, name: str, arr) -> None:
        self.values[name] = np.array(arr, dtype=np.float64, copy=True)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values


@dataclass
class MasteryVector:
    student: int
    values: np.ndarray  # length K, clamped to [0, 1]
    source: str
    untrained: bool = False


class FcLayer:
    """Dense layer x @ W + b.

    `monotone` layers get their negative weights clamped to zero after every
    optimizer step; initialization stays signed so the first forward passes
    are not saturated.
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 monotone: bool = False):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = ag.parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = ag.parameter(np.zeros((1, n_out)))
        self.monotone = monotone

    def forward(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class EmbeddingBank:
    """Trainable student/exercise/concept embeddings plus the fixed Q matrix.

    `spline_inputs` picks the init family: unit normal where embeddings feed
    sigmoids or dense layers (the classic choice, wide enough for the
    interaction signal to train), uniform over [-1, 1] where they feed
    spline grids (full basis coverage, nothing clamped at the start).
    """

    def __init__(self, n_students: int, Q: np.ndarray, dim: int,
                 rng: np.random.Generator, concept_nonneg: bool = False,
                 spline_inputs: bool = False):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2:
            raise IntegrityError(f"Q must be a matrix, got shape {Q.shape}")
        if np.any(Q.sum(axis=1) < 1):
            raise IntegrityError("every exercise needs at least one concept in Q")
        self.N = int(n_students)
        self.M, self.K = Q.shape
        self.D = int(dim)
        self.Q = Q

        def draw(shape):
            if spline_inputs:
                return rng.uniform(-1.0, 1.0, size=shape)
            return rng.normal(0.0, 1.0, size=shape)

        self.W_S = ag.parameter(draw((self.N, self.D)))
        self.W_E = ag.parameter(draw((self.M, self.D)))
        if concept_nonneg:
            if self.D == self.K:
                # scaled identity: keeps the mask aligned per concept while
                # starting strictly inside the spline grid range
                wq = 0.9 * np.eye(self.K)
            else:
                wq = np.abs(draw((self.K, self.D)))
        else:
            wq = draw((self.K, self.D))
        self.W_Q = ag.parameter(wq)
        self.concept_nonneg = concept_nonneg

    def check_ids(self, students: np.ndarray, exercises: np.ndarray) -> None:
        if np.any(students < 0) or np.any(students >= self.N):
            raise IdLookupError(f"student id out of range [0, {self.N})")
        if np.any(exercises < 0) or np.any(exercises >= self.M):
            raise IdLookupError(f"exercise id out of range [0, {self.M})")

    def concept_rows(self, exercises: np.ndarray) -> np.ndarray:
        return self.Q[np.asarray(exercises, dtype=np.intp)]

    def embed(self, students: np.ndarray, exercises: np.ndarray):
        """(h_S, h_E, h_C) for a batch of id pairs."""
        students = np.asarray(students, dtype=np.intp)
        exercises = np.asarray(exercises, dtype=np.intp)
        self.check_ids(students, exercises)
        h_s = ag.rows(self.W_S, students)
        h_e = ag.rows(self.W_E, exercises)
        h_c = ag.matmul(ag.constant(self.concept_rows(exercises)), self.W_Q)
        return h_s, h_e, h_c

    def parameters(self) -> list[Tensor]:
        return [self.W_S, self.W_E, self.W_Q]


class DiagnosisModel:
    """Base class: a variant tag, its parameter bank, and the forward pass."""

    variant: str

    def __init__(self):
        self.trained = False
        self.nonneg_params: list[Tensor] = []

    # subclasses fill these in
    def forward(self, students, exercises, train_mode: bool = False,
                rng: np.random.Generator | None = None,
                trace: ForwardTrace | None = None) -> Tensor:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def mastery(self, student: int, exercises=None) -> MasteryVector:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def monotone_layers(self) -> list[FcLayer]:
        return []

    def kan_networks(self) -> dict[str, KanNetwork]:
        return {}

    def predict(self, student: int, exercise: int, train_mode: bool = False,
                rng: np.random.Generator | None = None, with_trace: bool = False):
        trace = ForwardTrace() if with_trace else None
        if train_mode:
            out = self.forward(np.array([student]), np.array([exercise]),
                               train_mode=True, rng=rng, trace=trace)
            r = float(out.values[0, 0])
        else:
            with ag.no_grad():
                out = self.forward(np.array([student]), np.array([exercise]),
                                   train_mode=False, rng=rng, trace=trace)
            r = float(out.values[0, 0])
        return (r, trace) if with_trace else r

    def _mastery_result(self, student: int, values: np.ndarray,
                        source: str) -> MasteryVector:
        return MasteryVector(
            student=int(student),
            values=np.clip(np.asarray(values, dtype=np.float64).ravel(), 0.0, 1.0),
            source=source,
            untrained=not self.trained,
        )

    def _named_fc(self, prefix: str, layer: FcLayer) -> dict[str, Tensor]:
        return {f"{prefix}.weight": layer.weight, f"{prefix}.bias": layer.bias}

    def _named_kan(self, prefix: str, net: KanNetwork) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(net.layers):
            out[f"{prefix}.{i}.base_weight"] = layer.base_weight
            out[f"{prefix}.{i}.spline_coeffs"] = layer.spline_coeffs
        return out


def _sig(x: np.ndarray) -> np.ndarray:
    return ag._sigmoid_values(np.asarray(x, dtype=np.float64))


class IrtModel(DiagnosisModel):
    """Logistic response: sigmoid(a * (theta - beta)), a kept positive."""

    variant = "IRT"

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator):
        super().__init__()
        self.bank = bank
        self.fc_theta = FcLayer(bank.D, 1, rng)
        self.fc_beta = FcLayer(bank.D, 1, rng)
        self.fc_a = FcLayer(bank.D, 1, rng)

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, _ = self.bank.embed(students, exercises)
        theta = self.fc_theta.forward(h_s)
        beta = self.fc_beta.forward(h_e)
        a = ag.softplus(self.fc_a.forward(h_e))
        r = ag.sigmoid(ag.mul(a, ag.sub(theta, beta)))
        if trace is not None:
            trace.record("theta", theta.values)
            trace.record("beta", beta.values)
            trace.record("a", a.values)
        return r

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E}
        out.update(self._named_fc("theta_head", self.fc_theta))
        out.update(self._named_fc("beta_head", self.fc_beta))
        out.update(self._named_fc("a_head", self.fc_a))
        return out

    def mastery(self, student, exercises=None):
        with ag.no_grad():
            h_s = ag.rows(self.bank.W_S, np.array([student]))
            theta = self.fc_theta.forward(h_s).values[0, 0]
        return self._mastery_result(
            student, np.full(self.bank.K, _sig(theta)), "sigmoid(theta)"
        )


class MirtModel(DiagnosisModel):
    """Multidimensional logistic: sigmoid(sum(alpha * theta) - beta)."""

    variant = "MIRT"

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator):
        super().__init__()
        self.bank = bank
        self.fc_beta = FcLayer(bank.D, 1, rng)
        self.fc_alpha = FcLayer(bank.D, bank.D, rng)

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, h_c = self.bank.embed(students, exercises)
        theta = h_s
        beta = self.fc_beta.forward(h_e)
        alpha = self.fc_alpha.forward(h_c)
        r = ag.sigmoid(ag.sub(ag.sum_axis(ag.mul(alpha, theta), 1), beta))
        if trace is not None:
            trace.record("theta", theta.values)
            trace.record("beta", beta.values)
            trace.record("alpha", alpha.values)
        return r

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E,
               "bank.W_Q": self.bank.W_Q}
        out.update(self._named_fc("beta_head", self.fc_beta))
        out.update(self._named_fc("alpha_head", self.fc_alpha))
        return out

    def mastery(self, student, exercises=None):
        theta = self.bank.W_S.values[student]
        return self._mastery_result(student, _sig(theta), "sigmoid(theta)")


class DinaModel(DiagnosisModel):
    """Guess/slip model over binary concept mastery.

    Mastery indicators come from per-concept binary Gumbel-softmax on the
    student logits: soft samples at temperature tau while training, a
    deterministic hard threshold in evaluation.
    """

    variant = "DINA"

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator,
                 gumbel_tau: float = 1.0):
        super().__init__()
        if gumbel_tau <= 0:
            raise ConfigError(f"gumbel temperature must be positive, got {gumbel_tau}")
        self.bank = bank
        self.gumbel_tau = gumbel_tau
        self.fc_mastery = FcLayer(bank.D, bank.K, rng)
        self.fc_guess = FcLayer(bank.D, 1, rng)
        self.fc_slip = FcLayer(bank.D, 1, rng)

    def set_temperature(self, tau: float) -> None:
        if tau <= 0:
            raise ConfigError(f"gumbel temperature must be positive, got {tau}")
        self.gumbel_tau = tau

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, _ = self.bank.embed(students, exercises)
        logits = self.fc_mastery.forward(h_s)
        if train_mode:
            if rng is None:
                raise ContractError("training-mode DINA forward needs an rng")
            noise = rng.gumbel(size=(logits.values.shape[0], self.bank.K, 2))
            delta = noise[:, :, 0] - noise[:, :, 1]
            theta = ag.sigmoid(
                ag.scale(ag.add(logits, ag.constant(delta)), 1.0 / self.gumbel_tau)
            )
        else:
            theta = ag.constant((logits.values > 0.0).astype(np.float64))
        beta = self.bank.concept_rows(exercises)
        # theta_k ** beta_k == beta_k * theta_k + (1 - beta_k) for binary beta
        term = ag.add(ag.mul(theta, ag.constant(beta)), ag.constant(1.0 - beta))
        nt = ag.prod_axis1(term)
        g = ag.sigmoid(self.fc_guess.forward(h_e))
        sl = ag.sigmoid(self.fc_slip.forward(h_e))
        one = ag.constant(np.ones_like(nt.values))
        log_r = ag.add(
            ag.mul(ag.sub(one, nt), ag.log(g)),
            ag.mul(nt, ag.log(ag.sub(one, sl))),
        )
        r = ag.exp(log_r)
        if trace is not None:
            trace.record("theta", theta.values)
            trace.record("nt", nt.values)
            trace.record("g", g.values)
            trace.record("sl", sl.values)
        return r

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E}
        out.update(self._named_fc("mastery_head", self.fc_mastery))
        out.update(self._named_fc("guess_head", self.fc_guess))
        out.update(self._named_fc("slip_head", self.fc_slip))
        return out

    def mastery(self, student, exercises=None):
        with ag.no_grad():
            h_s = ag.rows(self.bank.W_S, np.array([student]))
            logits = self.fc_mastery.forward(h_s).values[0]
        return self._mastery_result(student, _sig(logits), "mastery probabilities")


class MfModel(DiagnosisModel):
    """Inner product of student and exercise embeddings, squashed to (0, 1)."""

    variant = "MF"

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator):
        super().__init__()
        self.bank = bank

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, _ = self.bank.embed(students, exercises)
        return ag.sigmoid(ag.sum_axis(ag.mul(h_s, h_e), 1))

    def named_parameters(self):
        return {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E}

    def mastery(self, student, exercises=None):
        return self._mastery_result(
            student, _sig(self.bank.W_S.values[student]), "sigmoid(h_S)"
        )


class _InteractionModel(DiagnosisModel):
    """Shared plumbing for the mask-and-difference family (NCD/KaNCD style)."""

    def _combine(self, f_s: Tensor, f_diff: Tensor, f_disc: Tensor,
                 h_c: Tensor) -> Tensor:
        return ag.scale_rows(ag.mul(h_c, ag.sub(f_s, f_diff)), f_disc)


class NcdModel(_InteractionModel):
    """Masked ability/difficulty interaction with a prediction head.

    The plain variant uses a positive-weight MLP head; the plus variant
    replaces both heads with single-layer KANs.
    """

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator,
                 use_kan: bool, hidden: tuple[int, int] = (256, 128),
                 grid: SplineGrid | None = None, input_norm: str = "none"):
        super().__init__()
        self.bank = bank
        self.use_kan = use_kan
        self.variant = "NCDplus" if use_kan else "NCD"
        if use_kan:
            self.disc_kan = KanNetwork([bank.D, 1], grid=grid, input_norm=input_norm, rng=rng)
            self.out_kan = KanNetwork([bank.D, 1], grid=grid, input_norm=input_norm, rng=rng)
        else:
            self.fc_disc = FcLayer(bank.D, 1, rng)
            h1, h2 = hidden
            self.fc_out = [
                FcLayer(bank.D, h1, rng, monotone=True),
                FcLayer(h1, h2, rng, monotone=True),
                FcLayer(h2, 1, rng, monotone=True),
            ]
        self.nonneg_params = [bank.W_Q]

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, h_c = self.bank.embed(students, exercises)
        f_s = ag.sigmoid(h_s)
        return self._forward_from_fs(f_s, h_e, h_c, trace)

    def _forward_from_fs(self, f_s: Tensor, h_e: Tensor, h_c: Tensor,
                         trace: ForwardTrace | None = None) -> Tensor:
        f_diff = ag.sigmoid(h_e)
        if self.use_kan:
            f_disc = ag.sigmoid(self.disc_kan.forward(h_e))
        else:
            f_disc = ag.sigmoid(self.fc_disc.forward(h_e))
        y = self._combine(f_s, f_diff, f_disc, h_c)
        if self.use_kan:
            r = ag.sigmoid(self.out_kan.forward(y))
        else:
            z = ag.sigmoid(self.fc_out[0].forward(y))
            z = ag.sigmoid(self.fc_out[1].forward(z))
            r = ag.sigmoid(self.fc_out[2].forward(z))
        if trace is not None:
            trace.record("f_s", f_s.values)
            trace.record("f_diff", f_diff.values)
            trace.record("f_disc", f_disc.values)
            trace.record("y", y.values)
        return r

    def predict_with_fs(self, student: int, exercise: int,
                        f_s_values: np.ndarray) -> float:
        """Re-run the pass with an explicit ability vector (probe hook)."""
        with ag.no_grad():
            h_e = ag.rows(self.bank.W_E, np.array([exercise]))
            h_c = ag.matmul(
                ag.constant(self.bank.concept_rows(np.array([exercise]))),
                self.bank.W_Q,
            )
            f_s = ag.constant(np.asarray(f_s_values, dtype=np.float64).reshape(1, -1))
            return float(self._forward_from_fs(f_s, h_e, h_c).values[0, 0])

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E,
               "bank.W_Q": self.bank.W_Q}
        if self.use_kan:
            out.update(self._named_kan("disc_kan", self.disc_kan))
            out.update(self._named_kan("out_kan", self.out_kan))
        else:
            out.update(self._named_fc("disc_head", self.fc_disc))
            for i, fc in enumerate(self.fc_out):
                out.update(self._named_fc(f"out_head.{i}", fc))
        return out

    def monotone_layers(self):
        return [] if self.use_kan else list(self.fc_out)

    def kan_networks(self):
        if not self.use_kan:
            return {}
        return {"disc": self.disc_kan, "output": self.out_kan}

    def mastery(self, student, exercises=None):
        return self._mastery_result(
            student, _sig(self.bank.W_S.values[student]), "f_S"
        )


class KscdModel(DiagnosisModel):
    """Concept-conditioned latent vectors, compared under the concept mask.

    The raw masked difference averages into [-1, 1]; it is shifted by +0.5
    and clamped so the output is a probability.
    """

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator,
                 use_kan: bool, grid: SplineGrid | None = None,
                 input_norm: str = "none"):
        super().__init__()
        self.bank = bank
        self.use_kan = use_kan
        self.variant = "KSCDplus" if use_kan else "KSCD"
        if use_kan:
            self.student_kan = KanNetwork([2 * bank.D, bank.D], grid=grid,
                                          input_norm=input_norm, rng=rng)
            self.exercise_kan = KanNetwork([2 * bank.D, bank.D], grid=grid,
                                           input_norm=input_norm, rng=rng)
        else:
            self.fc_student = FcLayer(2 * bank.D, bank.D, rng)
            self.fc_exercise = FcLayer(2 * bank.D, bank.D, rng)
        self.nonneg_params = [bank.W_Q]

    def _latents(self, h_s: Tensor, h_e: Tensor, h_c: Tensor):
        s_in = ag.concat([h_s, h_c])
        e_in = ag.concat([h_e, h_c])
        if self.use_kan:
            hs_hat = ag.sigmoid(self.student_kan.forward(s_in))
            he_hat = ag.sigmoid(self.exercise_kan.forward(e_in))
        else:
            hs_hat = ag.sigmoid(self.fc_student.forward(s_in))
            he_hat = ag.sigmoid(self.fc_exercise.forward(e_in))
        return hs_hat, he_hat

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, h_c = self.bank.embed(students, exercises)
        hs_hat, he_hat = self._latents(h_s, h_e, h_c)
        raw = ag.scale(
            ag.sum_axis(ag.mul(h_c, ag.sub(hs_hat, he_hat)), 1), 1.0 / self.bank.D
        )
        r = ag.clamp(ag.shift(raw, 0.5), 0.0, 1.0)
        if trace is not None:
            trace.record("hs_hat", hs_hat.values)
            trace.record("he_hat", he_hat.values)
        return r

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E,
               "bank.W_Q": self.bank.W_Q}
        if self.use_kan:
            out.update(self._named_kan("student_kan", self.student_kan))
            out.update(self._named_kan("exercise_kan", self.exercise_kan))
        else:
            out.update(self._named_fc("student_head", self.fc_student))
            out.update(self._named_fc("exercise_head", self.fc_exercise))
        return out

    def kan_networks(self):
        if not self.use_kan:
            return {}
        return {"student": self.student_kan, "exercise": self.exercise_kan}

    def mastery(self, student, exercises=None):
        """Mean latent ability under each unit concept row in turn."""
        vals = np.empty(self.bank.K)
        with ag.no_grad():
            h_s = ag.rows(self.bank.W_S, np.array([student]))
            for k in range(self.bank.K):
                h_c = ag.constant(self.bank.W_Q.values[k].reshape(1, -1))
                s_in = ag.concat([h_s, h_c])
                if self.use_kan:
                    hs_hat = ag.sigmoid(self.student_kan.forward(s_in))
                else:
                    hs_hat = ag.sigmoid(self.fc_student.forward(s_in))
                vals[k] = hs_hat.values.mean()
        return self._mastery_result(student, vals, "hs_hat per concept")


class RcdModel(KscdModel):
    """Same latents as the concept-conditioned model, but the difference goes
    through one more head before the logistic readout."""

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator,
                 use_kan: bool, grid: SplineGrid | None = None,
                 input_norm: str = "none"):
        super().__init__(bank, rng, use_kan, grid=grid, input_norm=input_norm)
        self.variant = "RCDplus" if use_kan else "RCD"
        if use_kan:
            self.pred_kan = KanNetwork([bank.D, bank.D], grid=grid,
                                       input_norm=input_norm, rng=rng)
        else:
            self.fc_pred = FcLayer(bank.D, bank.D, rng, monotone=True)
        self.nonneg_params = []

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, h_c = self.bank.embed(students, exercises)
        hs_hat, he_hat = self._latents(h_s, h_e, h_c)
        diff = ag.sub(hs_hat, he_hat)
        if self.use_kan:
            z = self.pred_kan.forward(diff)
        else:
            z = self.fc_pred.forward(diff)
        r = ag.sigmoid(ag.scale(ag.sum_axis(z, 1), 1.0 / self.bank.D))
        if trace is not None:
            trace.record("hs_hat", hs_hat.values)
            trace.record("he_hat", he_hat.values)
        return r

    def named_parameters(self):
        out = super().named_parameters()
        if self.use_kan:
            out.update(self._named_kan("pred_kan", self.pred_kan))
        else:
            out.update(self._named_fc("pred_head", self.fc_pred))
        return out

    def monotone_layers(self):
        return [] if self.use_kan else [self.fc_pred]

    def kan_networks(self):
        nets = super().kan_networks()
        if self.use_kan:
            nets["output"] = self.pred_kan
        return nets


class KancdModel(_InteractionModel):
    """Interaction model with learned ability and difficulty vectors.

    The baseline form of this model is not fully specified upstream; its
    heads here are dense layers with the same shapes as the KAN variant.
    """

    def __init__(self, bank: EmbeddingBank, rng: np.random.Generator,
                 use_kan: bool, grid: SplineGrid | None = None,
                 input_norm: str = "none"):
        super().__init__()
        self.bank = bank
        self.use_kan = use_kan
        self.variant = "KaNCDplus" if use_kan else "KaNCD"
        D = bank.D
        if use_kan:
            self.ability_kan = KanNetwork([D, D], grid=grid, input_norm=input_norm, rng=rng)
            self.diff_kan = KanNetwork([D, D], grid=grid, input_norm=input_norm, rng=rng)
            self.disc_kan = KanNetwork([D, 1], grid=grid, input_norm=input_norm, rng=rng)
            self.out_kan = KanNetwork([D, 1], grid=grid, input_norm=input_norm, rng=rng)
        else:
            self.fc_ability = FcLayer(D, D, rng)
            self.fc_diff = FcLayer(D, D, rng)
            self.fc_disc = FcLayer(D, 1, rng)
            self.fc_out = FcLayer(D, 1, rng, monotone=True)
        self.nonneg_params = [bank.W_Q]

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        h_s, h_e, h_c = self.bank.embed(students, exercises)
        if self.use_kan:
            f_s = ag.sigmoid(self.ability_kan.forward(h_s))
            f_diff = ag.sigmoid(self.diff_kan.forward(h_e))
            f_disc = ag.sigmoid(self.disc_kan.forward(h_e))
        else:
            f_s = ag.sigmoid(self.fc_ability.forward(h_s))
            f_diff = ag.sigmoid(self.fc_diff.forward(h_e))
            f_disc = ag.sigmoid(self.fc_disc.forward(h_e))
        y = self._combine(f_s, f_diff, f_disc, h_c)
        if self.use_kan:
            r = ag.sigmoid(self.out_kan.forward(y))
        else:
            r = ag.sigmoid(self.fc_out.forward(y))
        if trace is not None:
            trace.record("f_s", f_s.values)
            trace.record("f_diff", f_diff.values)
            trace.record("f_disc", f_disc.values)
            trace.record("y", y.values)
        return r

    def named_parameters(self):
        out = {"bank.W_S": self.bank.W_S, "bank.W_E": self.bank.W_E,
               "bank.W_Q": self.bank.W_Q}
        if self.use_kan:
            out.update(self._named_kan("ability_kan", self.ability_kan))
            out.update(self._named_kan("diff_kan", self.diff_kan))
            out.update(self._named_kan("disc_kan", self.disc_kan))
            out.update(self._named_kan("out_kan", self.out_kan))
        else:
            out.update(self._named_fc("ability_head", self.fc_ability))
            out.update(self._named_fc("diff_head", self.fc_diff))
            out.update(self._named_fc("disc_head", self.fc_disc))
            out.update(self._named_fc("out_head", self.fc_out))
        return out

    def monotone_layers(self):
        return [] if self.use_kan else [self.fc_out]

    def kan_networks(self):
        if not self.use_kan:
            return {}
        return {"ability": self.ability_kan, "difficulty": self.diff_kan,
                "disc": self.disc_kan, "output": self.out_kan}

    def mastery(self, student, exercises=None):
        with ag.no_grad():
            h_s = ag.rows(self.bank.W_S, np.array([student]))
            if self.use_kan:
                f_s = ag.sigmoid(self.ability_kan.forward(h_s))
            else:
                f_s = ag.sigmoid(self.fc_ability.forward(h_s))
        return self._mastery_result(student, f_s.values[0], "f_S")


class TwoLevelKanModel(DiagnosisModel):
    """Two-level aggregation: per-head embeddings feed one small KAN each,
    and a unified two-layer KAN turns the collected scalars into the
    prediction. The first upper layer's output is the mastery readout.

    ``kan_embeddings=True`` swaps the embedding tables for KANs applied to
    the one-hot id / concept-row inputs, realized as sparse row selection
    so the wide one-hot batches are never materialized.
    """

    def __init__(self, n_students: int, Q: np.ndarray, dim: int,
                 rng: np.random.Generator, k_heads: int = 2,
                 kan_embeddings: bool = False, grid: SplineGrid | None = None,
                 input_norm: str = "none"):
        super().__init__()
        if k_heads < 1:
            raise ConfigError(f"k_heads must be at least 1, got {k_heads}")
        Q = np.asarray(Q, dtype=np.float64)
        M, K = Q.shape
        if dim != K:
            raise ConfigError(
                f"two-level variants need embedding dim == concept count, got {dim} != {K}"
            )
        self.variant = "KA2NCDkan" if kan_embeddings else "KA2NCDe"
        self.kan_embeddings = kan_embeddings
        self.k_heads = k_heads
        self.N, self.M, self.K, self.D = int(n_students), M, K, dim
        self.Q = Q
        self.grid = grid if grid is not None else SplineGrid()
        if kan_embeddings:
            self.embed_layers: list[dict[str, KanLayer]] = [
                {
                    "student": KanLayer(self.N, dim, grid=self.grid, rng=rng),
                    "exercise": KanLayer(self.M, dim, grid=self.grid, rng=rng),
                    "concept": KanLayer(self.K, dim, grid=self.grid, rng=rng),
                }
                for _ in range(k_heads)
            ]
            # basis values at the only two inputs a binary vector can take
            self._b0 = basis_values(np.zeros((1, 1)), self.grid)[0, 0]
            self._b1 = basis_values(np.ones((1, 1)), self.grid)[0, 0]
            self._silu1 = 1.0 / (1.0 + np.exp(-1.0))
        else:
            self.banks = [
                EmbeddingBank(n_students, Q, dim, rng, spline_inputs=True)
                for _ in range(k_heads)
            ]
        self.lower = [
            KanNetwork([dim, 1], grid=self.grid, input_norm=input_norm, rng=rng)
            for _ in range(3 * k_heads)
        ]
        self.upper = KanNetwork([3 * k_heads, K, 1], grid=self.grid,
                                input_norm=input_norm, rng=rng)

    def _check_ids(self, students, exercises):
        if np.any(students < 0) or np.any(students >= self.N):
            raise IdLookupError(f"student id out of range [0, {self.N})")
        if np.any(exercises < 0) or np.any(exercises >= self.M):
            raise IdLookupError(f"exercise id out of range [0, {self.M})")

    def _binary_kan(self, layer: KanLayer, idx: np.ndarray | None,
                    xc: np.ndarray | None) -> Tensor:
        """Layer output for binary inputs: one-hot rows (idx) or 0/1 matrices."""
        delta = ag.add(
            ag.coeffs_dot(layer.spline_coeffs, self._b1 - self._b0),
            ag.scale(layer.base_weight, self._silu1),
        )
        offset = ag.transpose(
            ag.sum_axis(ag.coeffs_dot(layer.spline_coeffs, self._b0), 1)
        )
        if idx is not None:
            picked = ag.rows(ag.transpose(delta), idx)
        else:
            picked = ag.matmul(ag.constant(xc), ag.transpose(delta))
        return ag.add(picked, offset)

    def _head_embeddings(self, i: int, students: np.ndarray,
                         exercises: np.ndarray):
        if self.kan_embeddings:
            layers = self.embed_layers[i]
            xc = self.Q[exercises]
            h_s = self._binary_kan(layers["student"], students, None)
            h_e = self._binary_kan(layers["exercise"], exercises, None)
            h_c = self._binary_kan(layers["concept"], None, xc)
            return h_s, h_e, h_c
        return self.banks[i].embed(students, exercises)

    def forward(self, students, exercises, train_mode=False, rng=None, trace=None):
        students = np.asarray(students, dtype=np.intp)
        exercises = np.asarray(exercises, dtype=np.intp)
        self._check_ids(students, exercises)
        vs = []
        for i in range(self.k_heads):
            h_s, h_e, h_c = self._head_embeddings(i, students, exercises)
            vs.append(self.lower[3 * i].forward(h_s))
            vs.append(self.lower[3 * i + 1].forward(h_e))
            vs.append(self.lower[3 * i + 2].forward(h_c))
        v = ag.concat(vs)
        ls = self.upper.layers[0].forward(v)
        r = ag.sigmoid(self.upper.layers[1].forward(ls))
        if trace is not None:
            trace.record("v", v.values)
            trace.record("ls", ls.values)
        return r

    def named_parameters(self):
        out: dict[str, Tensor] = {}
        if self.kan_embeddings:
            for i, layers in enumerate(self.embed_layers):
                for kind, layer in layers.items():
                    out[f"embed.{i}.{kind}.base_weight"] = layer.base_weight
                    out[f"embed.{i}.{kind}.spline_coeffs"] = layer.spline_coeffs
        else:
            for i, bank in enumerate(self.banks):
                out[f"bank.{i}.W_S"] = bank.W_S
                out[f"bank.{i}.W_E"] = bank.W_E
                out[f"bank.{i}.W_Q"] = bank.W_Q
        for i, net in enumerate(self.lower):
            out.update(self._named_kan(f"lower.{i}", net))
        out.update(self._named_kan("upper", self.upper))
        return out

    def kan_networks(self):
        nets = {f"lower{i}": net for i, net in enumerate(self.lower)}
        nets["upper"] = self.upper
        return nets

    def mastery(self, student, exercises=None):
        """sigmoid of the upper latent vector, averaged over given exercises."""
        if exercises is None or len(exercises) == 0:
            raise ContractError(
                "two-level mastery needs the student's training exercises"
            )
        exercises = np.asarray(exercises, dtype=np.intp)
        trace = ForwardTrace()
        with ag.no_grad():
            self.forward(
                np.full(len(exercises), student, dtype=np.intp),
                exercises,
                trace=trace,
            )
        vals = _sig(trace["ls"]).mean(axis=0)
        return self._mastery_result(student, vals, "sigmoid(ls) over exercises")


def project_monotone(model: DiagnosisModel) -> None:
    """Clamp monotone-flagged dense weights (and masked concept embeddings)
    to be non-negative. Called after each optimizer step."""
    for layer in model.monotone_layers():
        np.maximum(layer.weight.values, 0.0, out=layer.weight.values)
    for t in model.nonneg_params:
        np.maximum(t.values, 0.0, out=t.values)


def build_model(variant: str, n_students: int, Q: np.ndarray,
                rng: np.random.Generator, dim: int | None = None,
                k_heads: int = 2, hidden: tuple[int, int] = (256, 128),
                grid: SplineGrid | None = None, input_norm: str = "none",
                gumbel_tau: float = 1.0) -> DiagnosisModel:
    """Construct any supported variant over the given roster and Q matrix."""
    if variant not in VARIANTS:
        raise ConfigError(
            f"unknown variant {variant!r}; supported: {', '.join(VARIANTS)}"
        )
    Q = np.asarray(Q, dtype=np.float64)
    K = Q.shape[1]
    D = K if dim is None else int(dim)

    if variant in ("KA2NCDe", "KA2NCDkan"):
        return TwoLevelKanModel(
            n_students, Q, D, rng, k_heads=k_heads,
            kan_embeddings=(variant == "KA2NCDkan"), grid=grid,
            input_norm=input_norm,
        )

    bank = EmbeddingBank(
        n_students, Q, D, rng,
        concept_nonneg=variant in _MASK_VARIANTS,
        spline_inputs=variant.endswith("plus"),
    )
    if variant == "IRT":
        return IrtModel(bank, rng)
    if variant == "MIRT":
        return MirtModel(bank, rng)
    if variant == "DINA":
        return DinaModel(bank, rng, gumbel_tau=gumbel_tau)
    if variant == "MF":
        return MfModel(bank, rng)
    if variant in ("NCD", "NCDplus"):
        return NcdModel(bank, rng, use_kan=variant == "NCDplus", hidden=hidden,
                        grid=grid, input_norm=input_norm)
    if variant in ("KSCD", "KSCDplus"):
        return KscdModel(bank, rng, use_kan=variant == "KSCDplus", grid=grid,
                         input_norm=input_norm)
    if variant in ("RCD", "RCDplus"):
        return RcdModel(bank, rng, use_kan=variant == "RCDplus", grid=grid,
                        input_norm=input_norm)
    # KaNCD / KaNCDplus
    return KancdModel(bank, rng, use_kan=variant == "KaNCDplus", grid=grid,
                      input_norm=input_norm)
