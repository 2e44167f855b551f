"""Embedded 8x16 monospace bitmap font covering printable ASCII (32..126).

Each glyph is 16 row bytes, most significant bit = leftmost pixel.
"""

import numpy as np

GLYPH_W = 8
GLYPH_H = 16
FIRST_CODE = 32

_HEX = (
    "00000000000000000000000000000000",  #  32 ' '
    "00000018181818181800181800000000",  #  33 '!'
    "0000002c2c2c2c000000000000000000",  #  34 '"'
    "00001216147f242cfe68484800000000",  #  35 '#'
    "000000003c6a60381e024e3c00000000",  #  36 '$'
    "00000070909076186e0b0b0e00000000",  #  37 '%'
    "0000003c6020305bcbc6463b00000000",  #  38 '&'
    "00000018181818000000000000000000",  #  39 "'"
    "00080818101010101010180808000000",  #  40 '('
    "00301018180808080818181030000000",  #  41 ')'
    "00000010563c3c561000000000000000",  #  42 '*'
    "00000000181818fe1818180000000000",  #  43 '+'
    "00000000000000000000181810100000",  #  44 ','
    "00000000000000003c00000000000000",  #  45 '-'
    "00000000000000000000181800000000",  #  46 '.'
    "00000006040c08181010302060400000",  #  47 '/'
    "0000003c6446425a4246643c00000000",  #  48 '0'
    "00000078080808080808083e00000000",  #  49 '1'
    "0000003c4406060c1830607e00000000",  #  50 '2'
    "0000003c4406043c0606463c00000000",  #  51 '3'
    "0000000c1c142464447e040400000000",  #  52 '4'
    "0000007c60607c040606447c00000000",  #  53 '5'
    "0000003c60407c664242663c00000000",  #  54 '6'
    "0000007e06040c081818103000000000",  #  55 '7'
    "0000003c6646663c6642663c00000000",  #  56 '8'
    "0000003c644646663e06043800000000",  #  57 '9'
    "00000000001818000000181800000000",  #  58 ':'
    "00000000001818000000181810100000",  #  59 ';'
    "0000000000021c70701c020000000000",  #  60 '<'
    "000000000000fe0000fe000000000000",  #  61 '='
    "0000000000c0780e0e78c00000000000",  #  62 '>'
    "0000003c26060c181000101000000000",  #  63 '?'
    "0000003c6242df939393df40601c0000",  #  64 '@'
    "00000018183c2c24667e42c300000000",  #  65 'A'
    "0000007c4646467c4642467c00000000",  #  66 'B'
    "0000001c226040404060221c00000000",  #  67 'C'
    "000000784c46464242464c7800000000",  #  68 'D'
    "0000007e6060607e6060607e00000000",  #  69 'E'
    "0000007e6060607e6060606000000000",  #  70 'F'
    "0000003c6240404e4242623c00000000",  #  71 'G'
    "000000424242427e4242424200000000",  #  72 'H'
    "0000007e181818181818187e00000000",  #  73 'I'
    "0000003c0404040404044c7800000000",  #  74 'J'
    "0000004244487078484c464300000000",  #  75 'K'
    "00000060606060606060607e00000000",  #  76 'L'
    "000000e6e6e6fadadac2c2c200000000",  #  77 'M'
    "000000626272525a4a4e464600000000",  #  78 'N'
    "0000003c664642424246663c00000000",  #  79 'O'
    "0000007c666262667c60606000000000",  #  80 'P'
    "0000003c664642424246663c0c040000",  #  81 'Q'
    "0000007c4646467c4c46424300000000",  #  82 'R'
    "0000003c6440603c0602463c00000000",  #  83 'S'
    "000000ff181818181818181800000000",  #  84 'T'
    "00000042424242424246663c00000000",  #  85 'U'
    "000000c2424664242c3c181800000000",  #  86 'V'
    "00000083c3c3da5a5a6e666600000000",  #  87 'W'
    "00000042663c18183c2466c200000000",  #  88 'X'
    "000000c266243c181818181800000000",  #  89 'Y'
    "0000007e06040c181020607f00000000",  #  90 'Z'
    "001c101010101010101010101c000000",  #  91 '['
    "00000040602030101018080c04060000",  #  92 '\\'
    "00380808080808080808080838000000",  #  93 ']'
    "000000183c6442000000000000000000",  #  94 '^'
    "0000000000000000000000000000ff00",  #  95 '_'
    "00003010000000000000000000000000",  #  96 '`'
    "00000000003c46063e46467e00000000",  #  97 'a'
    "00404040407c66626262667c00000000",  #  98 'b'
    "00000000001c22606060221c00000000",  #  99 'c'
    "00060606063e66464646663e00000000",  # 100 'd'
    "00000000003c66427e40623c00000000",  # 101 'e'
    "000e1810107e10101010101000000000",  # 102 'f'
    "00000000003e66464646663e06043800",  # 103 'g'
    "00606060607c66666666666600000000",  # 104 'h'
    "00180000003818181818187e00000000",  # 105 'i'
    "00080000003808080808080808187000",  # 106 'j'
    "0060606060666c78786c666200000000",  # 107 'k'
    "00701010101010101010180e00000000",  # 108 'l'
    "00000000007e5a5a5a5a5a5a00000000",  # 109 'm'
    "00000000007c66666666666600000000",  # 110 'n'
    "00000000003c66464246663c00000000",  # 111 'o'
    "00000000007c66626262667c40404000",  # 112 'p'
    "00000000003e66464646663e06060600",  # 113 'q'
    "00000000003e30303030303000000000",  # 114 'r'
    "00000000003c64603c06463c00000000",  # 115 's'
    "00000010107e10101010101e00000000",  # 116 't'
    "00000000006666666666663e00000000",  # 117 'u'
    "0000000000424664243c181800000000",  # 118 'v'
    "000000000083c3da5a7e6e6400000000",  # 119 'w'
    "0000000000662418183c244200000000",  # 120 'x'
    "0000000000426624243c181818107000",  # 121 'y'
    "00000000007e040c1830207e00000000",  # 122 'z'
    "000e181818187010181818180e000000",  # 123 '{'
    "00181818181818181818181818180000",  # 124 '|'
    "0070101818180e181818181070000000",  # 125 '}'
    "00000000000000720e00000000000000",  # 126 '~'
)

# drawn for any character outside the table: a hollow box, still inside 8x16
_FALLBACK = "0000007e424242424242424242427e00"


def _unpack(hexrow: str) -> np.ndarray:
    rows = np.frombuffer(bytes.fromhex(hexrow), dtype=np.uint8)
    return np.unpackbits(rows[:, None], axis=1).astype(bool)


_GLYPHS = [_unpack(h) for h in _HEX]
_FALLBACK_GLYPH = _unpack(_FALLBACK)


def glyph(ch: str) -> np.ndarray:
    """Return the (16, 8) boolean ink mask for a single character."""
    idx = ord(ch) - FIRST_CODE
    if 0 <= idx < len(_GLYPHS):
        return _GLYPHS[idx]
    return _FALLBACK_GLYPH


def text_mask(text: str, scale: int = 1) -> np.ndarray:
    """Ink mask for a run of characters, integer-upscaled by ``scale``."""
    if not text:
        return np.zeros((GLYPH_H * scale, 0), dtype=bool)
    mask = np.concatenate([glyph(c) for c in text], axis=1)
    if scale > 1:
        mask = mask.repeat(scale, axis=0).repeat(scale, axis=1)
    return mask
