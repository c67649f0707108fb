from .errors import DecodeError


class BitWriter:
    """MSB-first bit sink with exponential-Golomb helpers"""

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._nacc = 0
        self._count = 0

    def tell(self):
        """Number of bits written so far"""
        return self._count

    def write_uint(self, value, bits):
        """Writes an unsigned integer of a given number of bits"""
        assert 0 <= value < (1 << bits) or bits == 0 and value == 0, \
            "{} does not fit in {} bits".format(value, bits)
        self._acc = (self._acc << bits) | value
        self._nacc += bits
        self._count += bits
        while self._nacc >= 8:
            self._nacc -= 8
            self._buf.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_ue(self, value):
        """Writes an unsigned exp-Golomb code: floor(log2(v+1)) zeros, then v+1 in binary"""
        assert value >= 0, "ue() takes non-negative values"
        bits = (value + 1).bit_length() * 2 - 1
        self.write_uint(value + 1, bits)

    def write_se(self, value):
        """Writes a signed exp-Golomb code, mapping k>0 to 2k-1 and k<=0 to -2k"""
        self.write_ue(2 * value - 1 if value > 0 else -2 * value)

    def getvalue(self):
        """Payload bytes, the last byte zero-padded"""
        if self._nacc:
            return bytes(self._buf) + bytes([(self._acc << (8 - self._nacc)) & 0xFF])
        return bytes(self._buf)


class BitReader:
    """MSB-first bit source over a bytes payload"""

    def __init__(self, data, bit_limit=None):
        self._data = bytes(data)
        self._pos = 0
        self._limit = len(self._data) * 8 if bit_limit is None else bit_limit

    def tell(self):
        return self._pos

    def remaining(self):
        return self._limit - self._pos

    def read_bit(self):
        if self._pos >= self._limit:
            raise DecodeError("bitstream exhausted after {} bits".format(self._pos))
        byte = self._data[self._pos >> 3]
        bit = (byte >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit

    def read_uint(self, bits):
        value = 0
        for _ in range(bits):
            value = (value << 1) | self.read_bit()
        return value

    def read_ue(self):
        zeros = 0
        while self.read_bit() == 0:
            zeros += 1
            if zeros > 32:
                raise DecodeError("exp-Golomb prefix longer than 32 bits")
        return ((1 << zeros) | self.read_uint(zeros)) - 1

    def read_se(self):
        value = self.read_ue()
        q, r = value >> 1, value & 1
        return q + 1 if r else -q
