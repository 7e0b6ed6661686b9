"""Minimal Standard MIDI File reader/writer.

Only the features the score layer needs: format 0/1, note on/off,
set-tempo and time-signature meta events. Everything else is parsed
and skipped. Parsing failures raise :class:`MidiParseError` carrying
the byte offset at which the file stopped making sense.
"""
from __future__ import annotations

from dataclasses import dataclass, field


class MidiParseError(ValueError):
    """Malformed MIDI data. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class NoteOn:
    tick: int
    pitch: int
    velocity: int


@dataclass(frozen=True)
class NoteOff:
    tick: int
    pitch: int


@dataclass(frozen=True)
class SetTempo:
    tick: int
    microseconds_per_quarter: int


@dataclass(frozen=True)
class TimeSignature:
    tick: int
    numerator: int
    denominator: int


@dataclass(frozen=True)
class Marker:
    tick: int
    text: str


Event = NoteOn | NoteOff | SetTempo | TimeSignature | Marker


@dataclass
class SmfData:
    """Parsed events of one file, all tracks merged, ticks absolute."""

    ticks_per_quarter: int
    events: list[Event] = field(default_factory=list)
    end_tick: int = 0


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def fail(self, msg: str) -> "MidiParseError":
        return MidiParseError(msg, self.pos)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise self.fail(f"unexpected end of data, wanted {n} bytes")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def varint(self) -> int:
        value = 0
        for _ in range(4):
            byte = self.u8()
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise self.fail("variable-length quantity longer than 4 bytes")


def parse(data: bytes) -> SmfData:
    """Parse an SMF byte string into a merged, absolute-tick event list."""
    r = _Reader(data)
    if r.take(4) != b"MThd":
        r.pos = 0
        raise r.fail("missing MThd header")
    header_len = r.u32()
    if header_len < 6:
        raise r.fail(f"header chunk too short ({header_len} bytes)")
    fmt = r.u16()
    n_tracks = r.u16()
    division = r.u16()
    r.take(header_len - 6)
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks-per-quarter division", 12)

    smf = SmfData(ticks_per_quarter=division)
    for _ in range(n_tracks):
        _parse_track(r, smf)
    smf.events.sort(key=lambda e: e.tick)
    return smf


def _parse_track(r: _Reader, smf: SmfData) -> None:
    if r.take(4) != b"MTrk":
        r.pos -= 4
        raise r.fail("missing MTrk chunk")
    length = r.u32()
    track_end = r.pos + length
    if track_end > len(r.data):
        raise r.fail(f"track length {length} overruns file")

    tick = 0
    running_status: int | None = None
    while r.pos < track_end:
        tick += r.varint()
        byte = r.u8()
        if byte < 0x80:
            if running_status is None:
                raise r.fail(f"data byte 0x{byte:02x} with no running status")
            status = running_status
            r.pos -= 1
        else:
            status = byte
            if status < 0xF0:
                running_status = status

        if status == 0xFF:
            meta = r.u8()
            data = r.take(r.varint())
            if meta == 0x51 and len(data) == 3:
                smf.events.append(SetTempo(tick, int.from_bytes(data, "big")))
            elif meta == 0x58 and len(data) >= 2:
                smf.events.append(TimeSignature(tick, data[0], 1 << data[1]))
            elif meta == 0x06:
                smf.events.append(Marker(tick, data.decode("latin-1")))
            elif meta == 0x2F:
                smf.end_tick = max(smf.end_tick, tick)
                r.pos = track_end
                return
        elif status in (0xF0, 0xF7):
            r.take(r.varint())
            running_status = None
        else:
            kind = status & 0xF0
            if kind in (0xC0, 0xD0):
                r.take(1)
            else:
                a, b = r.take(2)
                if kind == 0x90 and b > 0:
                    smf.events.append(NoteOn(tick, a, b))
                elif kind == 0x80 or (kind == 0x90 and b == 0):
                    smf.events.append(NoteOff(tick, a))
    smf.end_tick = max(smf.end_tick, tick)


def _varint_bytes(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def build(ticks_per_quarter: int, events: list[Event], end_tick: int = 0) -> bytes:
    """Serialize events (absolute ticks) as a single-track format-0 file.

    Events are emitted in tick order; at equal ticks meta events come
    first, then note-offs, then note-ons, so a re-parse pairs notes the
    same way (FIFO per pitch). The end-of-track lands at ``end_tick`` or
    after the last event, whichever is later, so callers can declare a
    total length beyond the final note.
    """

    def order(e: Event) -> tuple[int, int]:
        rank = {SetTempo: 0, TimeSignature: 0, Marker: 0, NoteOff: 1, NoteOn: 2}[type(e)]
        return (e.tick, rank)

    body = bytearray()
    tick = 0
    for e in sorted(events, key=order):
        body += _varint_bytes(e.tick - tick)
        tick = e.tick
        if isinstance(e, SetTempo):
            body += bytes([0xFF, 0x51, 0x03])
            body += e.microseconds_per_quarter.to_bytes(3, "big")
        elif isinstance(e, TimeSignature):
            body += bytes([0xFF, 0x58, 0x04, e.numerator, e.denominator.bit_length() - 1, 24, 8])
        elif isinstance(e, Marker):
            text = e.text.encode("latin-1")
            body += bytes([0xFF, 0x06]) + _varint_bytes(len(text)) + text
        elif isinstance(e, NoteOn):
            body += bytes([0x90, e.pitch, e.velocity])
        elif isinstance(e, NoteOff):
            body += bytes([0x80, e.pitch, 0])
    body += _varint_bytes(max(0, end_tick - tick))
    body += bytes([0xFF, 0x2F, 0x00])

    out = bytearray(b"MThd")
    out += (6).to_bytes(4, "big")
    out += (0).to_bytes(2, "big")
    out += (1).to_bytes(2, "big")
    out += ticks_per_quarter.to_bytes(2, "big")
    out += b"MTrk"
    out += len(body).to_bytes(4, "big")
    out += body
    return bytes(out)
