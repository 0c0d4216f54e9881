"""Raw log records and the item catalog, with their tab-separated file formats."""

from dataclasses import dataclass
from typing import Optional

from .exceptions import DataError, ValidationError
from .geocode import GeoPoint

SOURCE = "source"
TARGET = "target"
DOMAINS = (SOURCE, TARGET)

CLICK = "click"
IMPRESSION = "impression"
ACTIONS = (IMPRESSION, CLICK)


@dataclass(frozen=True)
class BehaviorEvent:
    user: str
    item: str
    domain: str
    action: str
    timestamp: int
    location: Optional[GeoPoint] = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValidationError(f"unknown domain {self.domain!r}")
        if self.action not in ACTIONS:
            raise ValidationError(f"unknown action {self.action!r}")
        if self.timestamp < 0:
            raise ValidationError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class ItemCatalogEntry:
    item: str
    domain: str
    category: str = ""
    destination: str = ""
    topic: str = ""
    travel_related: bool = True
    price: float = 0.0
    popularity: float = 0.0


@dataclass(frozen=True)
class UserProfile:
    user: str
    age_bucket: str
    gender: str
    home_cell: int


def _fmt_float(x):
    return repr(float(x))


def write_events(path, events):
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            lat = lon = ""
            if e.location is not None:
                lat, lon = _fmt_float(e.location.lat), _fmt_float(e.location.lon)
            fh.write(f"{e.user}\t{e.item}\t{e.domain}\t{e.action}\t{e.timestamp}\t{lat}\t{lon}\n")


def read_events(path):
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            user, item, domain, action, ts, lat, lon = parts
            loc = GeoPoint(float(lat), float(lon)) if lat and lon else None
            try:
                events.append(BehaviorEvent(user, item, domain, action, int(ts), loc))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return events


_CATALOG_FIELDS = ("item", "domain", "category", "destination", "topic",
                   "travel_related", "price", "popularity")


def write_catalog(path, catalog):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(_CATALOG_FIELDS) + "\n")
        for c in catalog:
            fh.write("\t".join([c.item, c.domain, c.category, c.destination, c.topic,
                                str(int(c.travel_related)), _fmt_float(c.price),
                                _fmt_float(c.popularity)]) + "\n")


def read_catalog(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != _CATALOG_FIELDS:
            raise DataError(f"{path}: unexpected catalog header {header}")
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if len(f) != len(_CATALOG_FIELDS):
                raise DataError(f"{path}: malformed catalog row {line!r}")
            out.append(ItemCatalogEntry(f[0], f[1], f[2], f[3], f[4], f[5] == "1",
                                        float(f[6]), float(f[7])))
    return out


def write_users(path, users):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\tage_bucket\tgender\thome_cell\n")
        for u in users:
            fh.write(f"{u.user}\t{u.age_bucket}\t{u.gender}\t{u.home_cell}\n")


def read_users(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if len(f) != 4:
                raise DataError(f"{path}: malformed user row {line!r}")
            out.append(UserProfile(f[0], f[1], f[2], int(f[3])))
    return out
