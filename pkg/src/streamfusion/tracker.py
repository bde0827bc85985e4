"""Kalman filtering, tracklet lifecycle and the detection-to-fact feature extractor."""
from __future__ import annotations

import csv
import dataclasses
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .boxes import Box
from .config import EngineConfig
from .terms import (
    DEFAULT_NS, RDF_TYPE, SOSA, XSD_INTEGER, Iri, Literal, QuotedTriple, TimestampedFact, format_decimal,
)

EPS = 1e-6
DEFAULT_CONFIG = EngineConfig()


def _n(local: str) -> Iri:
    return Iri(DEFAULT_NS + local)


# vocabulary
DET, TRK, TRKLET, ENDS, VMATCH, SCORE = _n("det"), _n("trk"), _n("trklet"), _n("ends"), _n("vMatch"), _n("score")
IS_DETECTION_OF, IMAGE2D, DETECTION, TRACKLET = _n("isDetectionOf"), _n("Image2D"), _n("Detection"), _n("Tracklet")
TRACKLET_END, TRACKLET_PROPOSAL = _n("TrackletEnd"), _n("TrackletProposal")
CAM1, YOLO, KALMAN, DATA_ASSOCIATION = _n("cam1"), _n("Yolo"), _n("KalmanFilter"), _n("DataAssociation")
GEOMETRY = (_n("x"), _n("y"), _n("w"), _n("h"))
OBSERVATION, MADE_BY_SENSOR = Iri(SOSA + "Observation"), Iri(SOSA + "madeBySensor")
HAS_SIMPLE_RESULT, USED_PROCEDURE = Iri(SOSA + "hasSimpleResult"), Iri(SOSA + "usedProcedure")
IS_SAMPLE_OF = Iri(SOSA + "isSampleOf")

TENTATIVE, CONFIRMED, ENDED = "Tentative", "Confirmed", "Ended"
_LABEL = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*\Z")


# Kalman filter over [cx, cy, s, r, vcx, vcy, vs] -----------------------------

F = np.eye(7)
F[0, 4] = F[1, 5] = F[2, 6] = 1.0
H = np.eye(4, 7)


@dataclass(frozen=True, eq=False)
class KalmanState:
    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(7)
        P = np.array(self.P, dtype=float).reshape(7, 7)
        x.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @property
    def box(self) -> Box:
        cx, cy, s, r = self.x[:4]
        return Box.from_xysr(cx, cy, s, r)


def _noise(config: EngineConfig):
    R = np.diag(config.measurement_noise) * config.measurement_sigma
    Q = np.diag(config.process_noise)
    P0 = np.diag(config.initial_covariance)
    return R, Q, P0


def kf_init(box: Box, config: EngineConfig = DEFAULT_CONFIG) -> KalmanState:
    x = np.zeros(7)
    x[:4] = box.to_xysr()
    return KalmanState(x, _noise(config)[2])


def kf_predict(state: KalmanState, config: EngineConfig = DEFAULT_CONFIG) -> KalmanState:
    Q = _noise(config)[1]
    x = np.array(state.x)
    if x[2] + x[6] <= 0:
        x[6] = 0.0  # a shrinking box would flip sign: hold its area instead
    x = F @ x
    P = F @ state.P @ F.T + Q
    return KalmanState(x, (P + P.T) / 2)


def kf_update(state: KalmanState, measurement: Box, config: EngineConfig = DEFAULT_CONFIG) -> KalmanState:
    R = _noise(config)[0]
    z = np.array(measurement.to_xysr())
    P = state.P
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T  # S symmetric, so (S^-1 H P)^T = P H^T S^-1
    x = state.x + K @ (z - H @ state.x)
    A = np.eye(7) - K @ H
    P = A @ P @ A.T + K @ R @ K.T
    x[2] = max(x[2], EPS)
    x[3] = max(x[3], EPS)
    return KalmanState(x, (P + P.T) / 2)


# records and tracklets --------------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    box: Box
    score: float
    label: str = "car"
    appearance_id: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        if not _LABEL.match(self.label):
            raise ValueError(f"label {self.label!r} is not a valid local name")
        if self.frame < 0:
            raise ValueError("frame must be >= 0")


@dataclass(frozen=True)
class TrackletState:
    id: Iri
    object: Iri
    kalman: KalmanState
    hits: int = 1
    misses_in_a_row: int = 0
    status: str = TENTATIVE
    end_tick: Optional[int] = None
    last_hit_tick: int = 0
    last_box: Optional[Iri] = None  # detection box of the last hit
    score: float = 0.0

    @property
    def number(self) -> int:
        return int(re.search(r"(\d+)$", self.id.value).group(1))

    @property
    def live(self) -> bool:
        return self.status != ENDED


class BoxMinter:
    """Fresh :b<n> box IRIs, shared by detections and predictions."""

    def __init__(self, start: int = 1):
        self.counter = start

    def __call__(self) -> Iri:
        out = _n(f"b{self.counter}")
        self.counter += 1
        return out


def _lit(v: float) -> Literal:
    return Literal.of(float(v))


def geometry_facts(b: Iri, box: Box, t: int) -> list[TimestampedFact]:
    return [TimestampedFact(b, p, _lit(v), t) for p, v in zip(GEOMETRY, (box.x, box.y, box.w, box.h))]


class FeatureExtractor:
    """Lifts detection records into stream facts, minting one box IRI per record."""

    def __init__(self, minter: Optional[BoxMinter] = None, config: EngineConfig = DEFAULT_CONFIG):
        self.minter = minter or BoxMinter()
        self.config = config
        self.gallery: list = []  # (tick, box iri, appearance id)

    def extract(self, records: Iterable[DetectionRecord], tick: int) -> tuple[list[TimestampedFact], list[Iri]]:
        records = list(records)
        if any(r.frame != tick for r in records):
            raise ValueError(f"records do not all belong to tick {tick}")
        t = tick
        image = _n(f"image{t}")
        facts = [
            TimestampedFact(QuotedTriple(image, RDF_TYPE, IMAGE2D), RDF_TYPE, OBSERVATION, t),
            TimestampedFact(QuotedTriple(image, RDF_TYPE, IMAGE2D), MADE_BY_SENSOR, CAM1, t),
        ]
        det = _n(f"det{t}")
        boxes = []
        horizon = t - self.config.appearance_window
        self.gallery = [g for g in self.gallery if g[0] >= horizon]
        fresh = []
        for r in records:
            b = self.minter()
            boxes.append(b)
            q = QuotedTriple(det, DET, b)
            facts += [
                TimestampedFact(q, RDF_TYPE, DETECTION, t),
                TimestampedFact(q, HAS_SIMPLE_RESULT, Literal(r.label), t),
                TimestampedFact(q, SCORE, Literal(format_decimal(r.score)), t),
                TimestampedFact(q, IS_DETECTION_OF, image, t),
                TimestampedFact(q, USED_PROCEDURE, YOLO, t),
            ]
            facts += geometry_facts(b, r.box, t)
            facts.append(TimestampedFact(b, RDF_TYPE, _n(r.label), t))
            if r.appearance_id is not None:
                for ts, old, aid in self.gallery:
                    if aid == r.appearance_id and ts < t:
                        score = Literal(format_decimal(self.config.vmatch_score))
                        facts.append(TimestampedFact(QuotedTriple(b, VMATCH, old), SCORE, score, t))
                fresh.append((t, b, r.appearance_id))
        self.gallery += fresh
        return facts, boxes


def extract_features(records: Iterable[DetectionRecord], tick: int,
                     extractor: Optional[FeatureExtractor] = None) -> list[TimestampedFact]:
    return (extractor or FeatureExtractor()).extract(records, tick)[0]


def tracklet_group(trk: Iri, box: Iri, procedure: Iri, t: int) -> list[TimestampedFact]:
    q = QuotedTriple(trk, TRK, box)
    return [TimestampedFact(q, RDF_TYPE, TRACKLET, t), TimestampedFact(q, USED_PROCEDURE, procedure, t)]


@dataclass
class TrackletTable:
    """Tracklets plus the id counters and box minter they draw from."""
    config: EngineConfig = DEFAULT_CONFIG
    minter: BoxMinter = field(default_factory=BoxMinter)
    tracklets: list = field(default_factory=list)
    next_id: int = 1
    predicted: dict = field(default_factory=dict)  # tracklet id -> (tick, box iri, Box)
    associations: list = field(default_factory=list)  # (track number, detection index) at the last tick
    rows: list = field(default_factory=list)  # MOT rows emitted at the last tick

    @property
    def live(self) -> list:
        return [t for t in self.tracklets if t.live]

    def by_object(self) -> dict:
        return {t.object: t for t in self.tracklets if t.live}


def _assoc_pairs(chosen, box_index: dict, by_object: dict) -> dict:
    """Tracklet object -> detection index for every chosen association onto a live tracklet."""
    out = {}
    for h in chosen:
        if not h.is_association:
            continue
        if h.target in by_object and h.detection in box_index:
            out[h.target] = box_index[h.detection]
    return out


def advance_tracklets(table: TrackletTable, chosen, detections: list, tick: int) -> tuple[TrackletTable, list]:
    """Apply the chosen associations at ``tick``.

    ``detections`` is a list of (box iri, DetectionRecord) in record order.
    Returns the table and the facts it produces: association facts stamped
    ``tick`` and, for the following tick, predictions, end markers and the
    gallery facts of discontinued tracklets.
    """
    cfg = table.config
    t = tick
    box_index = {b: i for i, (b, _) in enumerate(detections)}
    by_object = table.by_object()
    pairs = _assoc_pairs(chosen, box_index, by_object)
    used = set(pairs.values())
    facts: list = []
    rows: list = []
    assoc: list = []
    updated = []
    for trk in table.tracklets:
        if not trk.live:
            updated.append(trk)
            continue
        if trk.object in pairs:
            i = pairs[trk.object]
            b, rec = detections[i]
            hits = trk.hits + 1
            trk = dataclasses.replace(
                trk, kalman=kf_update(trk.kalman, rec.box, cfg), hits=hits, misses_in_a_row=0,
                status=CONFIRMED if hits >= cfg.min_hits else trk.status, last_hit_tick=t, last_box=b, score=rec.score,
            )
            facts += tracklet_group(trk.id, b, DATA_ASSOCIATION, t)
            facts.append(TimestampedFact(b, IS_SAMPLE_OF, trk.object, t))
            assoc.append((trk.number, i))
            rows.append((t, trk.number, trk.kalman.box, rec.score))
        else:
            misses = trk.misses_in_a_row + 1
            if misses > cfg.max_age:
                trk = dataclasses.replace(trk, misses_in_a_row=misses, status=ENDED, end_tick=t)
            else:
                trk = dataclasses.replace(trk, misses_in_a_row=misses)
                if cfg.emit_predictions and trk.status == CONFIRMED:
                    rows.append((t, trk.number, trk.kalman.box, -1.0))
        updated.append(trk)
    for i, (b, rec) in enumerate(detections):
        if i in used or rec.score <= cfg.score_gate:
            continue
        n = table.next_id
        table.next_id += 1
        trk = TrackletState(_n(f"trk{n}"), _n(f"o{n}"), kf_init(rec.box, cfg), hits=1,
                            status=CONFIRMED if cfg.min_hits <= 1 else TENTATIVE, last_hit_tick=t, last_box=b,
                            score=rec.score)
        facts += tracklet_group(trk.id, b, DATA_ASSOCIATION, t)
        facts.append(TimestampedFact(b, IS_SAMPLE_OF, trk.object, t))
        assoc.append((n, i))
        if trk.status == CONFIRMED:
            rows.append((t, n, rec.box, rec.score))
        updated.append(trk)
    # predictions and end markers for the next tick
    nxt = t + 1
    table.predicted = {}
    out = []
    for trk in updated:
        if trk.live:
            trk = dataclasses.replace(trk, kalman=kf_predict(trk.kalman, cfg))
            bp = table.minter()
            pbox = trk.kalman.box
            table.predicted[trk.id] = (nxt, bp, pbox)
            facts += tracklet_group(trk.id, bp, KALMAN, nxt)
            facts.append(TimestampedFact(trk.id, TRKLET, trk.object, nxt))
            facts += geometry_facts(bp, pbox, nxt)
            if trk.misses_in_a_row >= 1:
                te = Literal(str(trk.last_hit_tick), XSD_INTEGER)
                facts.append(TimestampedFact(QuotedTriple(trk.id, ENDS, te), RDF_TYPE, TRACKLET_END, nxt))
                facts.append(TimestampedFact(trk.last_box, IS_SAMPLE_OF, trk.object, nxt))
        out.append(trk)
    table.tracklets = out
    table.associations = sorted(assoc)
    table.rows = sorted(rows, key=lambda r: r[1])
    facts.sort(key=lambda f: f.timestamp)
    return table, facts


# CSV ----------------------------------------------------------------------------

def parse_detections(text: str) -> list[DetectionRecord]:
    """Rows ``frame,x,y,w,h,score,label[,appearance_id]``; a header line is optional."""
    out = []
    for n, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        row = [c.strip() for c in row]
        if n == 1 and not row[0].lstrip("-").isdigit():
            continue
        if len(row) not in (7, 8):
            raise ValueError(f"detections line {n}: expected 7 or 8 fields, got {len(row)}")
        try:
            frame = int(row[0])
            x, y, w, h, score = (float(v) for v in row[1:6])
            out.append(DetectionRecord(frame, Box(x, y, w, h), score, row[6], row[7] or None if len(row) == 8 else None))
        except ValueError as exc:
            raise ValueError(f"detections line {n}: {exc}") from None
    return out


def read_detections(path) -> list[DetectionRecord]:
    with open(path, newline="") as fh:
        return parse_detections(fh.read())


def _num(v: float) -> str:
    return f"{v:.3f}"


def mot_line(frame: int, track: int, box: Box, score: float) -> str:
    return ",".join([str(frame), str(track), _num(box.x), _num(box.y), _num(box.w), _num(box.h),
                     _num(score) if score >= 0 else "-1", "-1", "-1", "-1"])
