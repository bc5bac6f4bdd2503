"""Little-endian binary reader/writer used by the .fmm, .fds and .fwt formats."""
import struct

import numpy as np

# Guards against headers that would ask for absurd allocations.
MAX_ELEMENTS = 1 << 31


class FileFormatError(ValueError):
    """Base class for malformed model/dataset/weights files."""


class BadMagicError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    def __init__(self, section, expected, available):
        self.section = section
        super().__init__(
            f"file truncated in section '{section}': needed {expected} bytes, "
            f"only {available} available"
        )


class DimensionOverflowError(FileFormatError):
    pass


class Writer:
    def __init__(self, magic):
        self._parts = [magic]

    def u8(self, v):
        self._parts.append(struct.pack("<B", v))

    def u32(self, v):
        self._parts.append(struct.pack("<I", v))

    def u64(self, v):
        self._parts.append(struct.pack("<Q", v))

    def f64(self, v):
        self._parts.append(struct.pack("<d", v))

    def f64_array(self, a):
        self._parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def u32_array(self, a):
        self._parts.append(np.ascontiguousarray(a, dtype="<u4").tobytes())

    def getvalue(self):
        return b"".join(self._parts)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.getvalue())


class Reader:
    def __init__(self, data, magic, kind):
        self.data = data
        self.pos = 0
        self.kind = kind
        head = data[: len(magic)]
        if head != magic:
            raise BadMagicError(
                f"not a {kind} file: expected magic {magic!r}, found {head!r}"
            )
        self.pos = len(magic)

    @classmethod
    def open(cls, path, magic, kind):
        with open(path, "rb") as fh:
            return cls(fh.read(), magic, kind)

    def _take(self, n, section):
        available = len(self.data) - self.pos
        if n > available:
            raise TruncatedFileError(section, n, available)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, section):
        return struct.unpack("<B", self._take(1, section))[0]

    def u32(self, section):
        return struct.unpack("<I", self._take(4, section))[0]

    def u64(self, section):
        return struct.unpack("<Q", self._take(8, section))[0]

    def f64(self, section):
        return struct.unpack("<d", self._take(8, section))[0]

    def _count(self, count, section):
        if count > MAX_ELEMENTS:
            raise DimensionOverflowError(
                f"section '{section}' declares {count} elements (limit {MAX_ELEMENTS})"
            )

    def f64_array(self, count, section):
        self._count(count, section)
        raw = self._take(8 * count, section)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def u32_array(self, count, section):
        self._count(count, section)
        raw = self._take(4 * count, section)
        return np.frombuffer(raw, dtype="<u4").astype(np.int64)

    def finish(self):
        extra = len(self.data) - self.pos
        if extra:
            raise FileFormatError(f"{extra} unexpected trailing bytes in {self.kind} file")
