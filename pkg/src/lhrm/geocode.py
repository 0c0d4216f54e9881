"""Geohash encoding of latitude/longitude pairs.

Standard bit-interleaving scheme: bisect the longitude and latitude
intervals alternately (longitude first), five bits per base-32 character.
A coordinate exactly on a bisection line goes to the upper half.
"""

from dataclasses import dataclass

from .exceptions import ValidationError

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_DECODE = {c: i for i, c in enumerate(BASE32)}

MAX_PRECISION = 12
LBS_PRECISION = 5


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        # NaN fails both comparisons
        if not -90.0 <= lat <= 90.0:
            raise ValidationError(f"latitude {self.lat!r} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValidationError(f"longitude {self.lon!r} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


def _check_precision(precision):
    if isinstance(precision, bool) or not isinstance(precision, int):
        raise ValidationError(f"precision must be an int, got {precision!r}")
    if not 1 <= precision <= MAX_PRECISION:
        raise ValidationError(f"precision must be in [1, {MAX_PRECISION}], got {precision}")


def encode_geohash(point, precision):
    """Return the geohash string of ``point`` with ``precision`` characters."""
    if not isinstance(point, GeoPoint):
        point = GeoPoint(*point)
    _check_precision(precision)

    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit, ch, even = 0, 0, True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if point.lon >= mid:
                ch = (ch << 1) | 1
                lon_lo = mid
            else:
                ch <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if point.lat >= mid:
                ch = (ch << 1) | 1
                lat_lo = mid
            else:
                ch <<= 1
                lat_hi = mid
        even = not even
        bit += 1
        if bit == 5:
            chars.append(BASE32[ch])
            bit, ch = 0, 0
    return "".join(chars)


def token_for_event(point):
    """Location token mixed into behavior sequences (precision 5)."""
    return encode_geohash(point, LBS_PRECISION)


def decode_bbox(code):
    """Bounding box ``(lat_lo, lat_hi, lon_lo, lon_hi)`` of a geohash cell."""
    if not code or len(code) > MAX_PRECISION:
        raise ValidationError(f"bad geohash length: {code!r}")
    lat = [-90.0, 90.0]
    lon = [-180.0, 180.0]
    even = True
    for c in code:
        try:
            val = _DECODE[c]
        except KeyError:
            raise ValidationError(f"invalid geohash character {c!r}") from None
        for shift in range(4, -1, -1):
            interval = lon if even else lat
            mid = (interval[0] + interval[1]) / 2
            if (val >> shift) & 1:
                interval[0] = mid
            else:
                interval[1] = mid
            even = not even
    return lat[0], lat[1], lon[0], lon[1]


def is_valid_token(code):
    return bool(code) and len(code) <= MAX_PRECISION and all(c in _DECODE for c in code)
