"""In-process simulation of K agencies and one cloud server.

Parties never call each other.  Each one turns an incoming :class:`Message`
into zero or more outgoing ones; the :class:`Network` serialises every
message with the wire codec, appends it to the transcript and delivers it in
FIFO order.  A party only ever sees the decoded records addressed to it.
"""

from __future__ import annotations

import hashlib
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from privlogit.data import LocalDataset
from privlogit.keys import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_MAX_SPREAD,
    Basis,
    ConfigurationError,
    KeyBundle,
    gen_basis,
    gen_commutative_key,
    gen_key_bundle,
    identity_bundle,
)
from privlogit.linalg import PermutationKey
from privlogit.protocol import ops
from privlogit.protocol.ops import (
    EncryptedDataset,
    EncryptedShare,
    ProtocolViolation,
    VerificationReport,
    VerificationUnavailable,
)
from privlogit.protocol.wire import (
    SERVER,
    TAG_FINAL_BLOCK,
    TAG_INTERMEDIATE,
    TAG_MODEL,
    TAG_PSEUDO,
    Kind,
    Message,
    decode,
    digest,
    encode,
)
from privlogit.solver import FitConfig, FitResult, fit

log = logging.getLogger(__name__)

TAMPER_MODES = ("encrypt", "decrypt")


def ring_chain(origin: int, k: int) -> tuple[int, ...]:
    """``origin, origin+1, ..., K, 1, ..., origin-1``."""
    return tuple((origin - 1 + j) % k + 1 for j in range(k))


@dataclass
class ProtocolConfig:
    n_agencies: int
    lam: float = 0.0
    block_size: int = DEFAULT_BLOCK_SIZE
    seed: int = 0
    chains: dict[int, Sequence[int]] | None = None
    tamper: str | None = None
    verifier: int = 1
    identity_keys: bool = False
    max_spread: float = DEFAULT_MAX_SPREAD
    keep_payloads: bool = False

    def __post_init__(self):
        k = self.n_agencies
        if k < 1:
            raise ConfigurationError("need at least one agency")
        if self.lam < 0:
            raise ConfigurationError("ridge parameter must be non-negative")
        if self.tamper is not None and self.tamper not in TAMPER_MODES:
            raise ConfigurationError(f"tamper must be one of {TAMPER_MODES}, got {self.tamper!r}")
        if not 1 <= self.verifier <= k:
            raise ConfigurationError(f"verifier {self.verifier} is not an agency id")
        chains = {i: ring_chain(i, k) for i in range(1, k + 1)}
        for i, q in (self.chains or {}).items():
            q = tuple(int(a) for a in q)
            if sorted(q) != list(range(1, k + 1)) or q[0] != i:
                raise ConfigurationError(f"chain for agency {i} must permute 1..{k} and start at {i}")
            chains[i] = q
        self.chains = chains

    def chain(self, origin: int) -> tuple[int, ...]:
        return tuple(self.chains[origin])


# -- transport ---------------------------------------------------------------

@dataclass(frozen=True)
class TranscriptEntry:
    index: int
    sender: int
    recipient: int
    kind: str
    tag: int
    origin: int
    hops: tuple[int, ...]
    rows: int
    cols: int
    nbytes: int
    digest: str


@dataclass
class ProtocolTranscript:
    entries: list[TranscriptEntry] = field(default_factory=list)
    payloads: list[bytes] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(e.digest.encode())
        return h.hexdigest()

    @property
    def total_bytes(self) -> int:
        return sum(e.nbytes for e in self.entries)

    def view(self, parties) -> list[TranscriptEntry]:
        """Entries a coalition sent or received."""
        parties = set(parties)
        return [e for e in self.entries if e.sender in parties or e.recipient in parties]

    def messages_for(self, parties) -> list[Message]:
        """Decoded payloads a coalition saw; needs ``keep_payloads``."""
        if self.payloads is None:
            raise ValueError("transcript was recorded without payloads")
        parties = set(parties)
        return [decode(self.payloads[e.index]) for e in self.entries
                if e.sender in parties or e.recipient in parties]

    def to_dicts(self) -> list[dict]:
        return [dict(e.__dict__, hops=list(e.hops)) for e in self.entries]


class Network:
    def __init__(self, keep_payloads: bool = False):
        self.queue: deque[bytes] = deque()
        self.transcript = ProtocolTranscript(payloads=[] if keep_payloads else None)
        self.parties: dict[int, Party] = {}

    def attach(self, party: Party):
        self.parties[party.party_id] = party

    def send(self, msg: Message):
        record = encode(msg)
        entry = TranscriptEntry(
            index=len(self.transcript.entries), sender=msg.sender, recipient=msg.recipient,
            kind=msg.kind.name, tag=msg.tag, origin=msg.origin, hops=msg.hops,
            rows=msg.matrix.shape[0], cols=msg.matrix.shape[1], nbytes=len(record),
            digest=digest(record),
        )
        self.transcript.entries.append(entry)
        if self.transcript.payloads is not None:
            self.transcript.payloads.append(record)
        self.queue.append(record)

    def run(self):
        index = len(self.transcript.entries) - len(self.queue)
        while self.queue:
            msg = decode(self.queue.popleft())
            party = self.parties.get(msg.recipient)
            if party is None:
                raise ProtocolViolation(f"no party with id {msg.recipient}", index)
            try:
                for out in party.handle(msg):
                    self.send(out)
            except ProtocolViolation as exc:
                if exc.message_index is None:
                    raise ProtocolViolation(str(exc), index) from None
                raise
            index += 1


# -- parties -----------------------------------------------------------------

class Party:
    party_id: int

    def handle(self, msg: Message) -> list[Message]:
        raise NotImplementedError


def _row(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(1, -1)


class Agency(Party):
    def __init__(self, data: LocalDataset, bundle: KeyBundle, config: ProtocolConfig,
                 tamper_rng: np.random.Generator | None = None):
        self.party_id = data.agency_id
        self.data = data
        self.bundle = bundle
        self.config = config
        self.k = config.n_agencies
        self.tamper_rng = tamper_rng
        self._pending_x: dict[int, Message] = {}
        self._sent_x: dict[int, np.ndarray] = {}
        self.beta: np.ndarray | None = None
        self.beta_s_star: np.ndarray | None = None
        self.final_block: np.ndarray | None = None
        self.intermediate: np.ndarray | None = None
        self.decrypt_check_vector: np.ndarray | None = None
        # a dishonest decrypter answers with a key nobody agreed on
        self._decrypt_matrix = bundle.matrix
        if config.tamper == "decrypt" and self._is_last_of_verifier_chain():
            self._decrypt_matrix = _fresh_key_matrix(bundle, config)

    def _is_last_of_verifier_chain(self) -> bool:
        return self.config.chain(self.config.verifier)[-1] == self.party_id

    def _next_hop(self, origin: int) -> int:
        chain = self.config.chain(origin)
        pos = chain.index(self.party_id)
        return chain[pos + 1] if pos + 1 < len(chain) else SERVER

    def _emit_share(self, share: EncryptedShare) -> list[Message]:
        to = self._next_hop(share.origin)
        x = share.x_star
        if (to == SERVER and self.config.tamper == "encrypt"
                and share.origin == self.config.verifier):
            x = x.copy()
            i = int(self.tamper_rng.integers(x.shape[0]))
            j = int(self.tamper_rng.integers(x.shape[1]))
            x[i, j] += 1.0
            log.info("agency %d tampers entry (%d, %d) of agency %d's share", self.party_id, i, j, share.origin)
        self._sent_x[share.origin] = x
        return [
            Message(Kind.SHARE_X, self.party_id, to, x, share.origin, share.hops),
            Message(Kind.SHARE_Z, self.party_id, to, _row(share.z_padded), share.origin, share.hops),
        ]

    # phase starters

    def start_encryption(self) -> list[Message]:
        return self._emit_share(ops.encrypt_own(self.data, self.bundle))

    def start_bstar(self) -> list[Message]:
        b_star = ops.accumulate_bstar(None, self.bundle)
        return [Message(Kind.BSTAR, self.party_id, self._bstar_next(), b_star, self.party_id, (self.party_id,))]

    def _bstar_next(self) -> int:
        return self.party_id + 1 if self.party_id < self.k else SERVER

    def start_pseudo(self) -> list[Message]:
        y_s = ops.make_pseudo_response(self.data)
        v = self.bundle.matrix.T @ y_s
        return [Message(Kind.PSEUDO, self.party_id, self._next_hop(self.party_id), v,
                        self.party_id, (self.party_id,))]

    def start_verification(self) -> list[Message]:
        out = [Message(Kind.VERIFY_REQ, self.party_id, SERVER, np.zeros((0, 0)),
                       self.party_id, tag=TAG_FINAL_BLOCK)]
        chain = self.config.chain(self.party_id)
        if len(chain) > 1:
            # whoever sent our share to the last hop holds the K-1 key intermediate
            holder = chain[-2]
            out.append(Message(Kind.VERIFY_REQ, self.party_id, holder, np.zeros((0, 0)),
                               self.party_id, tag=TAG_INTERMEDIATE))
        return out

    def request_decrypt_check(self) -> list[Message]:
        chain = self.config.chain(self.party_id)
        if len(chain) == 1:
            return []
        return [Message(Kind.BETA_STAR, self.party_id, chain[-1], self.beta_s_star,
                        self.party_id, tag=TAG_PSEUDO)]

    # message handling

    def handle(self, msg: Message) -> list[Message]:
        kind = msg.kind
        if kind == Kind.SHARE_X:
            self._check_chain(msg)
            self._pending_x[msg.origin] = msg
            return []
        if kind == Kind.SHARE_Z:
            xm = self._pending_x.pop(msg.origin, None)
            if xm is None or xm.hops != msg.hops:
                raise ProtocolViolation(f"agency {self.party_id} got Z of agency {msg.origin} without its X")
            z = msg.matrix.ravel()
            share = EncryptedShare(msg.origin, msg.hops, xm.matrix, z[1:], float(z[0]))
            return self._emit_share(ops.relay_encrypt(share, self.bundle))
        if kind == Kind.BSTAR:
            if msg.hops != tuple(range(1, self.party_id)):
                raise ProtocolViolation(f"B* reached agency {self.party_id} after hops {msg.hops}")
            b_star = ops.accumulate_bstar(msg.matrix, self.bundle)
            return [Message(Kind.BSTAR, self.party_id, self._bstar_next(), b_star, msg.origin,
                            msg.hops + (self.party_id,))]
        if kind == Kind.PSEUDO:
            self._check_chain(msg)
            v = self.bundle.matrix.T @ msg.matrix.ravel()
            return [Message(Kind.PSEUDO, self.party_id, self._next_hop(msg.origin), v,
                            msg.origin, msg.hops + (self.party_id,))]
        if kind == Kind.BETA_STAR and msg.tag == TAG_MODEL:
            return self._decrypt_and_forward(msg.matrix.ravel(), msg.hops)
        if kind == Kind.DECRYPT_STEP and msg.tag == TAG_MODEL:
            if msg.sender == self.k:
                self.beta = msg.matrix.ravel().copy()
                return []
            return self._decrypt_and_forward(msg.matrix.ravel(), msg.hops)
        if kind == Kind.BETA_STAR and msg.tag == TAG_PSEUDO:
            if msg.sender == SERVER:
                self.beta_s_star = msg.matrix.ravel().copy()
                return []
            step = self._decrypt_matrix @ msg.matrix.ravel()
            return [Message(Kind.DECRYPT_STEP, self.party_id, msg.sender, step, msg.origin,
                            (self.party_id,), TAG_PSEUDO)]
        if kind == Kind.DECRYPT_STEP and msg.tag == TAG_PSEUDO:
            self.decrypt_check_vector = msg.matrix.ravel().copy()
            return []
        if kind == Kind.VERIFY_REQ and msg.tag == TAG_INTERMEDIATE:
            if msg.origin not in self._sent_x:
                raise ProtocolViolation(f"agency {self.party_id} never relayed data of agency {msg.origin}")
            return [Message(Kind.VERIFY_DATA, self.party_id, msg.sender, self._sent_x[msg.origin],
                            msg.origin, tag=TAG_INTERMEDIATE)]
        if kind == Kind.VERIFY_DATA:
            if msg.tag == TAG_FINAL_BLOCK:
                self.final_block = msg.matrix
            else:
                self.intermediate = msg.matrix
            return []
        raise ProtocolViolation(f"agency {self.party_id} cannot handle {kind.name} tag {msg.tag}")

    def _check_chain(self, msg: Message):
        chain = self.config.chain(msg.origin)
        pos = len(msg.hops)
        if pos >= len(chain) or chain[pos] != self.party_id or tuple(chain[:pos]) != msg.hops:
            raise ProtocolViolation(
                f"{msg.kind.name} of agency {msg.origin} reached agency {self.party_id} "
                f"after hops {msg.hops}, chain is {chain}"
            )

    def _decrypt_and_forward(self, beta: np.ndarray, hops: tuple[int, ...]) -> list[Message]:
        if hops != tuple(range(1, self.party_id)):
            raise ProtocolViolation(f"decryption reached agency {self.party_id} after hops {hops}")
        beta = beta.copy()
        beta[1:] = self._decrypt_matrix @ beta[1:]
        hops = hops + (self.party_id,)
        if self.party_id < self.k:
            return [Message(Kind.DECRYPT_STEP, self.party_id, self.party_id + 1, beta, 0, hops, TAG_MODEL)]
        self.beta = beta
        return [Message(Kind.DECRYPT_STEP, self.party_id, j, beta, 0, hops, TAG_MODEL)
                for j in range(1, self.k)]


class Server(Party):
    party_id = SERVER

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self.k = config.n_agencies
        self._pending_x: dict[int, Message] = {}
        self.shares: dict[int, EncryptedShare] = {}
        self.b_star: np.ndarray | None = None
        self.pseudo: dict[int, np.ndarray] = {}
        self.dataset: EncryptedDataset | None = None
        self.beta_s_star: np.ndarray | None = None

    def assemble(self) -> EncryptedDataset:
        if len(self.shares) != self.k:
            raise ProtocolViolation(f"server holds {len(self.shares)} of {self.k} shares")
        if self.config.lam > 0 and self.b_star is None:
            raise ProtocolViolation("ridge fit requested but B* never arrived")
        shares = [self.shares[i] for i in range(1, self.k + 1)]
        self.dataset = ops.server_assemble(shares, self.b_star if self.config.lam > 0 else None, self.k)
        return self.dataset

    def send_estimate(self, beta_star) -> list[Message]:
        return [Message(Kind.BETA_STAR, SERVER, 1, beta_star, 0, (), TAG_MODEL)]

    def solve_pseudo(self) -> list[Message]:
        if len(self.pseudo) != self.k:
            raise ProtocolViolation(f"server holds {len(self.pseudo)} of {self.k} pseudo responses")
        y_s_star = np.sum([self.pseudo[i] for i in range(1, self.k + 1)], axis=0)
        self.beta_s_star = ops.server_solve_pseudo(self.dataset.features, y_s_star)
        return [Message(Kind.BETA_STAR, SERVER, i, self.beta_s_star, 0, (), TAG_PSEUDO)
                for i in range(1, self.k + 1)]

    def handle(self, msg: Message) -> list[Message]:
        kind = msg.kind
        if kind == Kind.SHARE_X:
            self._pending_x[msg.origin] = msg
            return []
        if kind == Kind.SHARE_Z:
            xm = self._pending_x.pop(msg.origin, None)
            if xm is None or xm.hops != msg.hops:
                raise ProtocolViolation(f"server got Z of agency {msg.origin} without its X")
            if msg.origin in self.shares:
                raise ProtocolViolation(f"second share from agency {msg.origin}")
            if tuple(msg.hops) != self.config.chain(msg.origin):
                raise ProtocolViolation(f"share of agency {msg.origin} arrived via {msg.hops}")
            z = msg.matrix.ravel()
            self.shares[msg.origin] = EncryptedShare(msg.origin, msg.hops, xm.matrix, z[1:], float(z[0]))
            return []
        if kind == Kind.BSTAR:
            if msg.hops != tuple(range(1, self.k + 1)):
                raise ProtocolViolation(f"B* arrived via {msg.hops}")
            self.b_star = msg.matrix
            return []
        if kind == Kind.PSEUDO:
            if tuple(msg.hops) != self.config.chain(msg.origin):
                raise ProtocolViolation(f"pseudo response of agency {msg.origin} arrived via {msg.hops}")
            self.pseudo[msg.origin] = msg.matrix.ravel()
            return []
        if kind == Kind.VERIFY_REQ and msg.tag == TAG_FINAL_BLOCK:
            block = self.dataset.block(msg.origin - 1)
            return [Message(Kind.VERIFY_DATA, SERVER, msg.sender, block, msg.origin, tag=TAG_FINAL_BLOCK)]
        raise ProtocolViolation(f"server cannot handle {kind.name} tag {msg.tag}")


# -- keys and escrow ----------------------------------------------------------

def _fresh_key_matrix(bundle: KeyBundle, config: ProtocolConfig) -> np.ndarray:
    p = bundle.matrix.shape[0]
    basis = gen_basis(p, config.block_size, config.seed)
    key = gen_commutative_key(basis, np.random.default_rng([config.seed, 0xBAD, bundle.agency_id]),
                              max_spread=config.max_spread)
    return key.materialized


def make_keys(config: ProtocolConfig, sample_counts: Sequence[int], p: int,
              seed: int | None = None) -> tuple[Basis | None, list[KeyBundle]]:
    seed = config.seed if seed is None else seed
    k = config.n_agencies
    if config.identity_keys:
        return None, [identity_bundle(i, p, sample_counts) for i in range(1, k + 1)]
    basis = gen_basis(p, config.block_size, seed)
    bundles = [gen_key_bundle(i, sample_counts, basis, seed, config.max_spread) for i in range(1, k + 1)]
    return basis, bundles


class KeyEscrow:
    """Test-only view of every secret.  Each lookup is counted."""

    def __init__(self, basis: Basis | None, bundles: Sequence[KeyBundle], config: ProtocolConfig):
        self._basis = basis
        self._bundles = {b.agency_id: b for b in bundles}
        self._config = config
        self.accesses = 0

    def basis(self) -> Basis | None:
        self.accesses += 1
        return self._basis

    def bundle(self, agency_id: int) -> KeyBundle:
        self.accesses += 1
        return self._bundles[agency_id]

    def key_product(self) -> np.ndarray:
        self.accesses += 1
        mats = [self._bundles[i].matrix for i in sorted(self._bundles)]
        out = mats[0]
        for m in mats[1:]:
            out = out @ m
        return out

    def composite_permutation(self, origin: int) -> PermutationKey:
        """Row permutation the whole chain applied to ``origin``'s rows."""
        self.accesses += 1
        perm = None
        for hop in self._config.chain(origin):
            step = self._bundles[hop].permutation_for(origin)
            perm = step if perm is None else perm.then(step)
        return perm

    def stacked_permutation(self) -> PermutationKey:
        """Block-diagonal composite over the stacked design, agency order."""
        images, offset = [], 0
        for i in sorted(self._bundles):
            perm = self.composite_permutation(i)
            images.append(perm.image + offset)
            offset += perm.size
        return PermutationKey(np.concatenate(images))


# -- drivers -----------------------------------------------------------------

@dataclass
class ProtocolSession:
    config: ProtocolConfig
    network: Network
    agencies: dict[int, Agency]
    server: Server
    escrow: KeyEscrow | None

    @property
    def transcript(self) -> ProtocolTranscript:
        return self.network.transcript

    def _kick(self, messages):
        for m in messages:
            self.network.send(m)
        self.network.run()

    def encrypt(self) -> EncryptedDataset:
        for i in range(1, self.config.n_agencies + 1):
            self._kick(self.agencies[i].start_encryption())
        if self.config.lam > 0:
            self._kick(self.agencies[1].start_bstar())
        return self.server.assemble()

    def decrypt(self, beta_star) -> np.ndarray:
        self._kick(self.server.send_estimate(beta_star))
        return self.agencies[self.config.n_agencies].beta

    def verify(self) -> list[VerificationReport]:
        """Pseudo-response round plus both checks run by the verifier agency."""
        for i in range(1, self.config.n_agencies + 1):
            self._kick(self.agencies[i].start_pseudo())
        try:
            self._kick(self.server.solve_pseudo())
        except VerificationUnavailable as exc:
            detail = str(exc)
            return [VerificationReport(c, False, float("nan"), float("nan"), "unavailable: " + detail)
                    for c in ("encryption", "decryption")]
        v = self.agencies[self.config.verifier]
        self._kick(v.start_verification())
        self._kick(v.request_decrypt_check())
        x1 = v.data.x
        enc = ops.verify_encryption(x1, v.final_block, v.beta_s_star)
        if v.intermediate is None:
            dec = VerificationReport("decryption", enc.passed, enc.max_gap, enc.tolerance,
                                     "single agency: same as the encryption check")
        else:
            dec = ops.verify_decryption(v.intermediate, v.decrypt_check_vector, x1)
        return [enc, dec]


def open_session(config: ProtocolConfig, datasets: Sequence[LocalDataset],
                 bundles: Sequence[KeyBundle] | None = None, basis: Basis | None = None,
                 escrow: bool = True) -> ProtocolSession:
    k = config.n_agencies
    if len(datasets) != k:
        raise ConfigurationError(f"config names {k} agencies, got {len(datasets)} datasets")
    for i, d in enumerate(datasets, start=1):
        if d.agency_id != i:
            raise ConfigurationError(f"dataset #{i} belongs to agency {d.agency_id}")
    p = datasets[0].p
    if any(d.p != p for d in datasets):
        raise ConfigurationError("agencies disagree on the number of features")
    if bundles is None:
        basis, bundles = make_keys(config, [d.n for d in datasets], p)
    bundles = list(bundles)
    network = Network(config.keep_payloads)
    tamper_rng = np.random.default_rng([config.seed, 0x7A4])
    agencies = {d.agency_id: Agency(d, b, config, tamper_rng) for d, b in zip(datasets, bundles)}
    server = Server(config)
    for party in (*agencies.values(), server):
        network.attach(party)
    vault = KeyEscrow(basis, bundles, config) if escrow else None
    return ProtocolSession(config, network, agencies, server, vault)


@dataclass
class ProtocolResult:
    dataset: EncryptedDataset
    transcript: ProtocolTranscript
    escrow: KeyEscrow | None
    session: ProtocolSession


def run_protocol(config: ProtocolConfig, datasets: Sequence[LocalDataset],
                 bundles: Sequence[KeyBundle] | None = None, basis: Basis | None = None,
                 escrow: bool = True) -> ProtocolResult:
    """Pre-modeling phase: every encryption chain plus the ridge accumulator."""
    session = open_session(config, datasets, bundles, basis, escrow)
    dataset = session.encrypt()
    return ProtocolResult(dataset, session.transcript, session.escrow, session)


@dataclass
class PipelineResult:
    beta: np.ndarray
    fit: FitResult
    dataset: EncryptedDataset
    transcript: ProtocolTranscript
    timings_ms: dict[str, float]
    verification: list[VerificationReport]
    escrow: KeyEscrow | None

    @property
    def beta_star(self) -> np.ndarray:
        return self.fit.beta

    @property
    def verified(self) -> bool:
        return all(r.passed for r in self.verification)


def run_pipeline(
    config: ProtocolConfig,
    datasets: Sequence[LocalDataset],
    fit_config: FitConfig | None = None,
    *,
    verify: bool = False,
    escrow: bool = True,
    bundles: Sequence[KeyBundle] | None = None,
    basis: Basis | None = None,
    on_iteration: Callable | None = None,
) -> PipelineResult:
    """Encryption chains, server-side Newton fit, decryption chain, optional verification."""
    fit_config = fit_config or FitConfig(lam=config.lam)
    if fit_config.lam != config.lam:
        raise ConfigurationError("fit and protocol configs disagree on the ridge parameter")
    timings = {}
    t0 = time.perf_counter()
    session = open_session(config, datasets, bundles, basis, escrow)
    dataset = session.encrypt()
    t1 = time.perf_counter()
    result = fit(dataset.x_star, z=dataset.z_star, config=fit_config,
                 b_star=dataset.b_star, on_iteration=on_iteration)
    t2 = time.perf_counter()
    beta = session.decrypt(result.beta)
    t3 = time.perf_counter()
    timings["pre_modeling"] = 1e3 * (t1 - t0)
    timings["modeling"] = 1e3 * (t2 - t1)
    timings["post_modeling"] = 1e3 * (t3 - t2)
    reports = []
    if verify:
        reports = session.verify()
        timings["verification"] = 1e3 * (time.perf_counter() - t3)
    log.info("pipeline K=%d: %d iterations, converged=%s", config.n_agencies,
             result.iterations, result.converged)
    return PipelineResult(beta, result, dataset, session.transcript, timings, reports, session.escrow)
