"""Range coder driven by a finite-alphabet mixture predictor.

Stream layout: 8-byte big-endian symbol count, the first 8 bytes of the
SHA-256 of the predictor's JSON spec, then the payload. The payload is the
shortest aligned dyadic interval inside the final coding interval, padded to
whole bytes; the decoder reads zeros past its end.

Coder arithmetic uses a 62-bit range register renormalised a byte at a time,
with carries resolved through a cached byte plus a count of pending 0xFF
bytes. Probabilities are quantised to integer frequencies summing to 2^32 with
every symbol getting at least one unit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DecodeError, DomainError, UnsupportedError
from .mixtures import MixturePredictor

WIDTH = 62
TOP = 1 << WIDTH
RENORM = 1 << (WIDTH - 8)
FREQ_BITS = 32
FREQ_TOTAL = 1 << FREQ_BITS
MAX_ALPHABET = 1 << 16
HEADER = 16

PredictorFactory = Callable[[], MixturePredictor]


def quantize(probs) -> np.ndarray:
    """Integer frequencies summing to ``2^32``, each at least 1."""
    p = np.asarray(probs, dtype=float)
    k = p.size
    if k > MAX_ALPHABET:
        raise UnsupportedError(f"alphabet of {k} symbols exceeds {MAX_ALPHABET}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DomainError("predictive probabilities must be finite and nonnegative")
    p = p / p.sum()
    freq = np.floor(p * (FREQ_TOTAL - k)).astype(np.int64) + 1
    freq[int(np.argmax(p))] += FREQ_TOTAL - int(freq.sum())
    return freq


def model_hash(predictor: MixturePredictor) -> bytes:
    text = json.dumps(predictor.spec(), sort_keys=True,
                      default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
    return hashlib.sha256(text.encode()).digest()[:8]


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = TOP
        self.cache = 0
        self.pending = 1  # the cached byte plus this many 0xFF bytes are unsettled
        self.out = bytearray()
        self.shifts = 0

    def _shift_low(self):
        if self.low < 0xFF << (WIDTH - 8) or self.low >= TOP:
            carry = self.low >> WIDTH
            byte = self.cache
            while self.pending:
                self.out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self.pending -= 1
            self.cache = (self.low >> (WIDTH - 8)) & 0xFF
        self.pending += 1
        self.shifts += 1
        self.low = (self.low & (RENORM - 1)) << 8

    def encode(self, cum, freq):
        r = self.range >> FREQ_BITS
        self.low += r * cum
        self.range = r * freq
        while self.range < RENORM:
            self.range <<= 8
            self._shift_low()

    def settled(self) -> bytes:
        """Bytes that no later carry can change, without the leading placeholder."""
        return bytes(self.out[1:])

    def finish(self):
        """Payload bytes and the codeword length in bits.

        The codeword is the shortest aligned dyadic interval inside the final
        coding interval, so every continuation of the payload, including the
        zero padding the decoder uses, decodes to the same symbols.
        """
        lo, hi = self.low, self.low + self.range
        for j in range(WIDTH, -1, -1):
            v = -(-lo >> j) << j
            if v + (1 << j) <= hi:
                break
        bits = 8 * self.shifts + WIDTH - j
        self.low = v
        for _ in range(WIDTH // 8 + 2):
            self._shift_low()
        if self.out[0] != 0:
            raise AssertionError("placeholder byte received a carry")
        payload = bytes(self.out[1:])
        size = -(-bits // 8)
        if any(payload[size:]):
            raise AssertionError("codeword has nonzero bits past its length")
        return payload[:size], bits


class RangeDecoder:
    def __init__(self, payload: bytes):
        self.value = int.from_bytes(payload, "big") if payload else 0
        self.nbits = 8 * len(payload)
        self.pos = 0
        self.range = TOP
        self.code = self._read(WIDTH)

    def _read(self, count):
        # bits past the end of the payload read as zeros
        self.pos += count
        shift = self.nbits - self.pos
        chunk = self.value >> shift if shift >= 0 else self.value << -shift
        return chunk & ((1 << count) - 1)

    def target(self):
        return min(self.code // (self.range >> FREQ_BITS), FREQ_TOTAL - 1)

    def consume(self, cum, freq):
        r = self.range >> FREQ_BITS
        self.code -= r * cum
        self.range = r * freq
        while self.range < RENORM:
            self.range <<= 8
            self.code = (self.code << 8) | self._read(8)


@dataclass(frozen=True)
class CodedBitstream:
    payload: bytes
    n: int
    model_hash: bytes
    # Codeword length; streams read back from bytes only know the byte count.
    bit_length: int = field(compare=False)

    def to_bytes(self) -> bytes:
        return self.n.to_bytes(8, "big") + self.model_hash + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodedBitstream":
        if len(data) < HEADER:
            raise DecodeError("stream shorter than its 16-byte header", 0)
        payload = data[HEADER:]
        return cls(payload, int.from_bytes(data[:8], "big"), data[8:HEADER], 8 * len(payload))


def _fresh(factory: PredictorFactory) -> MixturePredictor:
    predictor = factory()
    if predictor.alphabet_size is None:
        raise UnsupportedError("arithmetic coding needs a finite alphabet")
    if predictor.alphabet_size > MAX_ALPHABET:
        raise UnsupportedError(f"alphabet of {predictor.alphabet_size} symbols exceeds {MAX_ALPHABET}")
    if predictor.t != 0:
        raise DomainError("the factory must return an unused predictor")
    return predictor


def _cum(freq):
    return np.concatenate([[0], np.cumsum(freq)])


@dataclass
class EncodeResult:
    stream: CodedBitstream
    model_log2: float  # -log2 m^n under the exact predictor
    quantized_log2: float  # -log2 of the product of quantised probabilities


def encode_detailed(factory: PredictorFactory, sequence) -> EncodeResult:
    predictor = _fresh(factory)
    enc = RangeEncoder()
    q_log2 = []
    k = predictor.alphabet_size
    for x in sequence:
        x = int(x)
        if not 0 <= x < k:
            raise DomainError(f"symbol {x} outside alphabet 0..{k - 1}")
        freq = quantize(predictor.predictive())
        cum = _cum(freq)
        enc.encode(int(cum[x]), int(freq[x]))
        q_log2.append(FREQ_BITS - math.log2(int(freq[x])))
        predictor.update(x)
    payload, bits = enc.finish()
    stream = CodedBitstream(payload, len(sequence), model_hash(factory()), bits)
    return EncodeResult(stream, -predictor.log_marginal / math.log(2), math.fsum(q_log2))


def encode(factory: PredictorFactory, sequence) -> CodedBitstream:
    return encode_detailed(factory, sequence).stream


def _first_divergence(factory, symbols, payload):
    """Index of the first symbol whose settled output disagrees with ``payload``."""
    predictor = factory()
    enc = RangeEncoder()
    for i, x in enumerate(symbols):
        freq = quantize(predictor.predictive())
        cum = _cum(freq)
        enc.encode(int(cum[x]), int(freq[x]))
        predictor.update(x)
        done = enc.settled()
        padded = payload[:len(done)].ljust(len(done), b"\0")
        if done != padded:
            return i
    return max(len(symbols) - 1, 0)


def decode(factory: PredictorFactory, stream, verify=True) -> list:
    """Invert ``encode``; ``stream`` may be a ``CodedBitstream`` or raw bytes.

    With ``verify`` the decoded symbols are re-encoded and must reproduce the
    payload exactly, which catches truncated or altered payloads.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = CodedBitstream.from_bytes(bytes(stream))
    predictor = _fresh(factory)
    if model_hash(predictor) != stream.model_hash:
        raise DecodeError("model identifier does not match the stream", 0)
    dec = RangeDecoder(stream.payload)
    symbols = []
    # first symbol whose decision read zero padding past the payload end
    padded_from = None
    for i in range(stream.n):
        if padded_from is None and dec.pos > dec.nbits:
            padded_from = i
        freq = quantize(predictor.predictive())
        cum = _cum(freq)
        target = dec.target()
        x = int(np.searchsorted(cum, target, side="right")) - 1
        if not 0 <= x < freq.size:
            raise DecodeError("code value outside the coding interval", i)
        dec.consume(int(cum[x]), int(freq[x]))
        if dec.code < 0 or dec.code >= dec.range:
            raise DecodeError("code value outside the coding interval", i)
        predictor.update(x)
        symbols.append(x)
    if verify and encode(factory, symbols).payload != stream.payload:
        index = padded_from if padded_from is not None else _first_divergence(factory, symbols, stream.payload)
        raise DecodeError("payload is truncated or altered", index)
    return symbols


@dataclass(frozen=True)
class CodelengthReport:
    mean_payload_bits: float
    mean_source_bits: float
    mean_overhead_bits: float
    mean_model_bits: float
    max_excess_bits: float  # max over samples of payload - ceil(-log2 m~)
    samples: int

    @property
    def within_bound(self):
        return self.max_excess_bits <= 2


def codelength_report(source, factory: PredictorFactory, n, samples=200, seed=0) -> CodelengthReport:
    """Mean payload length against the true source's ideal code length."""
    from .redundancy import MC_CHUNK, monte_carlo_sequences

    payload, ideal, model, excess = [], [], [], []
    for c in range(math.ceil(samples / MC_CHUNK)):
        seqs = np.atleast_2d(monte_carlo_sequences(source, n, samples, seed, c))
        lp = np.atleast_1d(source.log_density(seqs))
        for seq, l in zip(seqs, lp):
            res = encode_detailed(factory, seq.tolist())
            payload.append(res.stream.bit_length)
            ideal.append(-l / math.log(2))
            model.append(res.model_log2)
            excess.append(res.stream.bit_length - math.ceil(res.quantized_log2))
    mp, ms = math.fsum(payload) / samples, math.fsum(ideal) / samples
    return CodelengthReport(mp, ms, mp - ms, math.fsum(model) / samples, float(max(excess)), samples)
