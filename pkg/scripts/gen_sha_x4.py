#!/usr/bin/env python3
"""Emit the 4-way interleaved SHA-NI block function embedded in _fastwalk.c.

Four independent single-block compressions are interleaved so the rnds2
dependency chains of separate lanes overlap; a lone chain is latency-bound.
Output goes to stdout; the checked-in copy lives inside _fastwalk.c.
"""

K = [0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
     0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
     0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
     0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
     0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
     0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
     0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
     0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2]

lines = []


def emit(s=""):
    lines.append(s)


def kpair(i):
    lo = (K[i + 1] << 32) | K[i]
    hi = (K[i + 3] << 32) | K[i + 2]
    return f"_mm_set_epi64x(0x{hi:016X}ULL, 0x{lo:016X}ULL)"


def qround(midx, kp, sched):
    emit("    for (int u = 0; u < 4; u++)")
    emit(f"        MS[u] = _mm_add_epi32(M[u][{midx}], {kp});")
    emit("    for (int u = 0; u < 4; u++)")
    emit("        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);")
    if sched:
        a, b, c = sched  # M[a] += alignr(M[c], M[b], 4); M[a] = msg2(M[a], M[c])
        emit("    for (int u = 0; u < 4; u++) {")
        emit(f"        T[u] = _mm_alignr_epi8(M[u][{c}], M[u][{b}], 4);")
        emit(f"        M[u][{a}] = _mm_add_epi32(M[u][{a}], T[u]);")
        emit(f"        M[u][{a}] = _mm_sha256msg2_epu32(M[u][{a}], M[u][{c}]);")
        emit("    }")
    emit("    for (int u = 0; u < 4; u++) {")
    emit("        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);")
    emit("        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);")
    emit("    }")


def msg1(a, b):
    emit("    for (int u = 0; u < 4; u++)")
    emit(f"        M[u][{a}] = _mm_sha256msg1_epu32(M[u][{a}], M[u][{b}]);")


emit("/* generated by scripts/gen_sha_x4.py; do not edit by hand */")
emit('__attribute__((target("sha,sse4.1,ssse3")))')
emit("static void sha256_ni_x4(uint32_t w_in[4][16], uint32_t out2[4][2])")
emit("{")
emit("    __m128i S0[4], S1[4], M[4][4], MS[4], T[4];")
emit("    static const uint32_t H0[8] = {")
emit("        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,")
emit("        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,")
emit("    };")
emit("    for (int u = 0; u < 4; u++) {")
emit("        __m128i TMP = _mm_loadu_si128((const __m128i *)&H0[0]);")
emit("        __m128i ST1 = _mm_loadu_si128((const __m128i *)&H0[4]);")
emit("        TMP = _mm_shuffle_epi32(TMP, 0xB1);")
emit("        ST1 = _mm_shuffle_epi32(ST1, 0x1B);")
emit("        S0[u] = _mm_alignr_epi8(TMP, ST1, 8);")
emit("        S1[u] = _mm_blend_epi16(ST1, TMP, 0xF0);")
emit("        M[u][0] = _mm_loadu_si128((const __m128i *)&w_in[u][0]);")
emit("        M[u][1] = _mm_loadu_si128((const __m128i *)&w_in[u][4]);")
emit("        M[u][2] = _mm_loadu_si128((const __m128i *)&w_in[u][8]);")
emit("        M[u][3] = _mm_loadu_si128((const __m128i *)&w_in[u][12]);")
emit("    }")

qround(0, kpair(0), None)
qround(1, kpair(4), None)
msg1(0, 1)
qround(2, kpair(8), None)
msg1(1, 2)
qround(3, kpair(12), (0, 2, 3))
msg1(2, 3)
for r in range(16, 64, 4):
    m = ((r - 16) // 4) % 4
    sched = ((m + 1) % 4, (m + 3) % 4, m) if r <= 56 else None
    qround(m, kpair(r), sched)
    if r <= 48:
        msg1((m + 3) % 4, m)

emit("    for (int u = 0; u < 4; u++) {")
emit("        __m128i TMP = _mm_loadu_si128((const __m128i *)&H0[0]);")
emit("        __m128i ST1i = _mm_loadu_si128((const __m128i *)&H0[4]);")
emit("        TMP = _mm_shuffle_epi32(TMP, 0xB1);")
emit("        ST1i = _mm_shuffle_epi32(ST1i, 0x1B);")
emit("        __m128i A0 = _mm_alignr_epi8(TMP, ST1i, 8);")
emit("        __m128i A1 = _mm_blend_epi16(ST1i, TMP, 0xF0);")
emit("        S0[u] = _mm_add_epi32(S0[u], A0);")
emit("        S1[u] = _mm_add_epi32(S1[u], A1);")
emit("        __m128i T2 = _mm_shuffle_epi32(S0[u], 0x1B);")
emit("        __m128i T3 = _mm_shuffle_epi32(S1[u], 0xB1);")
emit("        __m128i OUT0 = _mm_blend_epi16(T2, T3, 0xF0);")
emit("        uint32_t st[4];")
emit("        _mm_storeu_si128((__m128i *)st, OUT0);")
emit("        out2[u][0] = st[0];")
emit("        out2[u][1] = st[1];")
emit("    }")
emit("}")

print("\n".join(lines))
