/* Optional accelerator for the keyed shuffle walks.
 *
 * Computes the same SHA-256 draw stream and early-exit Fisher-Yates walks as
 * _kernels.py, using the x86 SHA extensions when the CPU has them. Four
 * independent lanes are interleaved per iteration because a single SHA-256
 * round chain is latency-bound; finished lanes are refilled from the queue
 * so the pipeline stays full. Loaded via ctypes; callers must check
 * cm_available() and cm_selftest() first and fall back to the numba path
 * otherwise. Bit-for-bit parity with the reference implementation is
 * enforced by the test suite.
 *
 * Build: cc -O3 -fPIC -shared -mssse3 -msse4.1 -msha -o _fastwalk_lib.so _fastwalk.c
 */

#include <stdint.h>
#include <string.h>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define CM_HAVE_SHA_BUILD 1
#else
#define CM_HAVE_SHA_BUILD 0
#endif

/* ------------------------------------------------------------------ */
/* portable single-block SHA-256 (fallback and self-test cross-check)  */

static const uint32_t K256[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
};

#define ROTR(x, n) (((x) >> (n)) | ((x) << (32 - (n))))

static void sha256_soft(const uint32_t w_in[16], uint32_t out2[2])
{
    uint32_t w[64];
    memcpy(w, w_in, 16 * sizeof(uint32_t));
    for (int i = 16; i < 64; i++) {
        uint32_t x = w[i - 15], y = w[i - 2];
        uint32_t s0 = ROTR(x, 7) ^ ROTR(x, 18) ^ (x >> 3);
        uint32_t s1 = ROTR(y, 17) ^ ROTR(y, 19) ^ (y >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    uint32_t a = 0x6a09e667, b = 0xbb67ae85, c = 0x3c6ef372, d = 0xa54ff53a;
    uint32_t e = 0x510e527f, f = 0x9b05688c, g = 0x1f83d9ab, h = 0x5be0cd19;
    for (int i = 0; i < 64; i++) {
        uint32_t S1 = ROTR(e, 6) ^ ROTR(e, 11) ^ ROTR(e, 25);
        uint32_t ch = (e & f) ^ ((~e) & g);
        uint32_t t1 = h + S1 + ch + K256[i] + w[i];
        uint32_t S0 = ROTR(a, 2) ^ ROTR(a, 13) ^ ROTR(a, 22);
        uint32_t mj = (a & b) ^ (a & c) ^ (b & c);
        uint32_t t2 = S0 + mj;
        h = g; g = f; f = e; e = d + t1;
        d = c; c = b; b = a; a = t1 + t2;
    }
    out2[0] = a + 0x6a09e667;
    out2[1] = b + 0xbb67ae85;
}

#if CM_HAVE_SHA_BUILD
__attribute__((target("sha,sse4.1,ssse3")))
static void sha256_ni(const uint32_t w[16], uint32_t out2[2])
{
    __m128i STATE0, STATE1, MSG, TMP, MSG0, MSG1, MSG2, MSG3;
    __m128i ABEF_SAVE, CDGH_SAVE;

    static const uint32_t H0[8] = {
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
    };
    TMP = _mm_loadu_si128((const __m128i *)&H0[0]);
    STATE1 = _mm_loadu_si128((const __m128i *)&H0[4]);
    TMP = _mm_shuffle_epi32(TMP, 0xB1);          /* CDAB */
    STATE1 = _mm_shuffle_epi32(STATE1, 0x1B);    /* EFGH */
    STATE0 = _mm_alignr_epi8(TMP, STATE1, 8);    /* ABEF */
    STATE1 = _mm_blend_epi16(STATE1, TMP, 0xF0); /* CDGH */

    ABEF_SAVE = STATE0;
    CDGH_SAVE = STATE1;

    MSG0 = _mm_set_epi32((int)w[3], (int)w[2], (int)w[1], (int)w[0]);
    MSG1 = _mm_set_epi32((int)w[7], (int)w[6], (int)w[5], (int)w[4]);
    MSG2 = _mm_set_epi32((int)w[11], (int)w[10], (int)w[9], (int)w[8]);
    MSG3 = _mm_set_epi32((int)w[15], (int)w[14], (int)w[13], (int)w[12]);

    /* rounds 0-3 */
    MSG = _mm_add_epi32(MSG0, _mm_set_epi64x(0xE9B5DBA5B5C0FBCFULL, 0x71374491428A2F98ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);

    /* rounds 4-7 */
    MSG = _mm_add_epi32(MSG1, _mm_set_epi64x(0xAB1C5ED5923F82A4ULL, 0x59F111F13956C25BULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG0 = _mm_sha256msg1_epu32(MSG0, MSG1);

    /* rounds 8-11 */
    MSG = _mm_add_epi32(MSG2, _mm_set_epi64x(0x550C7DC3243185BEULL, 0x12835B01D807AA98ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG1 = _mm_sha256msg1_epu32(MSG1, MSG2);

    /* rounds 12-15 */
    MSG = _mm_add_epi32(MSG3, _mm_set_epi64x(0xC19BF1749BDC06A7ULL, 0x80DEB1FE72BE5D74ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG3, MSG2, 4);
    MSG0 = _mm_add_epi32(MSG0, TMP);
    MSG0 = _mm_sha256msg2_epu32(MSG0, MSG3);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG2 = _mm_sha256msg1_epu32(MSG2, MSG3);

    /* rounds 16-19 */
    MSG = _mm_add_epi32(MSG0, _mm_set_epi64x(0x240CA1CC0FC19DC6ULL, 0xEFBE4786E49B69C1ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG0, MSG3, 4);
    MSG1 = _mm_add_epi32(MSG1, TMP);
    MSG1 = _mm_sha256msg2_epu32(MSG1, MSG0);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG3 = _mm_sha256msg1_epu32(MSG3, MSG0);

    /* rounds 20-23 */
    MSG = _mm_add_epi32(MSG1, _mm_set_epi64x(0x76F988DA5CB0A9DCULL, 0x4A7484AA2DE92C6FULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG1, MSG0, 4);
    MSG2 = _mm_add_epi32(MSG2, TMP);
    MSG2 = _mm_sha256msg2_epu32(MSG2, MSG1);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG0 = _mm_sha256msg1_epu32(MSG0, MSG1);

    /* rounds 24-27 */
    MSG = _mm_add_epi32(MSG2, _mm_set_epi64x(0xBF597FC7B00327C8ULL, 0xA831C66D983E5152ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG2, MSG1, 4);
    MSG3 = _mm_add_epi32(MSG3, TMP);
    MSG3 = _mm_sha256msg2_epu32(MSG3, MSG2);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG1 = _mm_sha256msg1_epu32(MSG1, MSG2);

    /* rounds 28-31 */
    MSG = _mm_add_epi32(MSG3, _mm_set_epi64x(0x1429296706CA6351ULL, 0xD5A79147C6E00BF3ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG3, MSG2, 4);
    MSG0 = _mm_add_epi32(MSG0, TMP);
    MSG0 = _mm_sha256msg2_epu32(MSG0, MSG3);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG2 = _mm_sha256msg1_epu32(MSG2, MSG3);

    /* rounds 32-35 */
    MSG = _mm_add_epi32(MSG0, _mm_set_epi64x(0x53380D134D2C6DFCULL, 0x2E1B213827B70A85ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG0, MSG3, 4);
    MSG1 = _mm_add_epi32(MSG1, TMP);
    MSG1 = _mm_sha256msg2_epu32(MSG1, MSG0);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG3 = _mm_sha256msg1_epu32(MSG3, MSG0);

    /* rounds 36-39 */
    MSG = _mm_add_epi32(MSG1, _mm_set_epi64x(0x92722C8581C2C92EULL, 0x766A0ABB650A7354ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG1, MSG0, 4);
    MSG2 = _mm_add_epi32(MSG2, TMP);
    MSG2 = _mm_sha256msg2_epu32(MSG2, MSG1);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG0 = _mm_sha256msg1_epu32(MSG0, MSG1);

    /* rounds 40-43 */
    MSG = _mm_add_epi32(MSG2, _mm_set_epi64x(0xC76C51A3C24B8B70ULL, 0xA81A664BA2BFE8A1ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG2, MSG1, 4);
    MSG3 = _mm_add_epi32(MSG3, TMP);
    MSG3 = _mm_sha256msg2_epu32(MSG3, MSG2);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG1 = _mm_sha256msg1_epu32(MSG1, MSG2);

    /* rounds 44-47 */
    MSG = _mm_add_epi32(MSG3, _mm_set_epi64x(0x106AA070F40E3585ULL, 0xD6990624D192E819ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG3, MSG2, 4);
    MSG0 = _mm_add_epi32(MSG0, TMP);
    MSG0 = _mm_sha256msg2_epu32(MSG0, MSG3);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG2 = _mm_sha256msg1_epu32(MSG2, MSG3);

    /* rounds 48-51 */
    MSG = _mm_add_epi32(MSG0, _mm_set_epi64x(0x34B0BCB52748774CULL, 0x1E376C0819A4C116ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG0, MSG3, 4);
    MSG1 = _mm_add_epi32(MSG1, TMP);
    MSG1 = _mm_sha256msg2_epu32(MSG1, MSG0);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);
    MSG3 = _mm_sha256msg1_epu32(MSG3, MSG0);

    /* rounds 52-55 */
    MSG = _mm_add_epi32(MSG1, _mm_set_epi64x(0x682E6FF35B9CCA4FULL, 0x4ED8AA4A391C0CB3ULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG1, MSG0, 4);
    MSG2 = _mm_add_epi32(MSG2, TMP);
    MSG2 = _mm_sha256msg2_epu32(MSG2, MSG1);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);

    /* rounds 56-59 */
    MSG = _mm_add_epi32(MSG2, _mm_set_epi64x(0x8CC7020884C87814ULL, 0x78A5636F748F82EEULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    TMP = _mm_alignr_epi8(MSG2, MSG1, 4);
    MSG3 = _mm_add_epi32(MSG3, TMP);
    MSG3 = _mm_sha256msg2_epu32(MSG3, MSG2);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);

    /* rounds 60-63 */
    MSG = _mm_add_epi32(MSG3, _mm_set_epi64x(0xC67178F2BEF9A3F7ULL, 0xA4506CEB90BEFFFAULL));
    STATE1 = _mm_sha256rnds2_epu32(STATE1, STATE0, MSG);
    MSG = _mm_shuffle_epi32(MSG, 0x0E);
    STATE0 = _mm_sha256rnds2_epu32(STATE0, STATE1, MSG);

    STATE0 = _mm_add_epi32(STATE0, ABEF_SAVE);
    STATE1 = _mm_add_epi32(STATE1, CDGH_SAVE);

    TMP = _mm_shuffle_epi32(STATE0, 0x1B);       /* FEBA */
    STATE1 = _mm_shuffle_epi32(STATE1, 0xB1);    /* DCHG */
    STATE0 = _mm_blend_epi16(TMP, STATE1, 0xF0); /* DCBA */

    uint32_t st[4];
    _mm_storeu_si128((__m128i *)st, STATE0);
    out2[0] = st[0]; /* a */
    out2[1] = st[1]; /* b */
}

/* generated by scripts/gen_sha_x4.py; do not edit by hand */
__attribute__((target("sha,sse4.1,ssse3")))
static void sha256_ni_x4(uint32_t w_in[4][16], uint32_t out2[4][2])
{
    __m128i S0[4], S1[4], M[4][4], MS[4], T[4];
    static const uint32_t H0[8] = {
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
    };
    for (int u = 0; u < 4; u++) {
        __m128i TMP = _mm_loadu_si128((const __m128i *)&H0[0]);
        __m128i ST1 = _mm_loadu_si128((const __m128i *)&H0[4]);
        TMP = _mm_shuffle_epi32(TMP, 0xB1);
        ST1 = _mm_shuffle_epi32(ST1, 0x1B);
        S0[u] = _mm_alignr_epi8(TMP, ST1, 8);
        S1[u] = _mm_blend_epi16(ST1, TMP, 0xF0);
        M[u][0] = _mm_loadu_si128((const __m128i *)&w_in[u][0]);
        M[u][1] = _mm_loadu_si128((const __m128i *)&w_in[u][4]);
        M[u][2] = _mm_loadu_si128((const __m128i *)&w_in[u][8]);
        M[u][3] = _mm_loadu_si128((const __m128i *)&w_in[u][12]);
    }
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][0], _mm_set_epi64x(0xE9B5DBA5B5C0FBCFULL, 0x71374491428A2F98ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][1], _mm_set_epi64x(0xAB1C5ED5923F82A4ULL, 0x59F111F13956C25BULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][0] = _mm_sha256msg1_epu32(M[u][0], M[u][1]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][2], _mm_set_epi64x(0x550C7DC3243185BEULL, 0x12835B01D807AA98ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][1] = _mm_sha256msg1_epu32(M[u][1], M[u][2]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][3], _mm_set_epi64x(0xC19BF1749BDC06A7ULL, 0x80DEB1FE72BE5D74ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][3], M[u][2], 4);
        M[u][0] = _mm_add_epi32(M[u][0], T[u]);
        M[u][0] = _mm_sha256msg2_epu32(M[u][0], M[u][3]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][2] = _mm_sha256msg1_epu32(M[u][2], M[u][3]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][0], _mm_set_epi64x(0x240CA1CC0FC19DC6ULL, 0xEFBE4786E49B69C1ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][0], M[u][3], 4);
        M[u][1] = _mm_add_epi32(M[u][1], T[u]);
        M[u][1] = _mm_sha256msg2_epu32(M[u][1], M[u][0]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][3] = _mm_sha256msg1_epu32(M[u][3], M[u][0]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][1], _mm_set_epi64x(0x76F988DA5CB0A9DCULL, 0x4A7484AA2DE92C6FULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][1], M[u][0], 4);
        M[u][2] = _mm_add_epi32(M[u][2], T[u]);
        M[u][2] = _mm_sha256msg2_epu32(M[u][2], M[u][1]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][0] = _mm_sha256msg1_epu32(M[u][0], M[u][1]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][2], _mm_set_epi64x(0xBF597FC7B00327C8ULL, 0xA831C66D983E5152ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][2], M[u][1], 4);
        M[u][3] = _mm_add_epi32(M[u][3], T[u]);
        M[u][3] = _mm_sha256msg2_epu32(M[u][3], M[u][2]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][1] = _mm_sha256msg1_epu32(M[u][1], M[u][2]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][3], _mm_set_epi64x(0x1429296706CA6351ULL, 0xD5A79147C6E00BF3ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][3], M[u][2], 4);
        M[u][0] = _mm_add_epi32(M[u][0], T[u]);
        M[u][0] = _mm_sha256msg2_epu32(M[u][0], M[u][3]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][2] = _mm_sha256msg1_epu32(M[u][2], M[u][3]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][0], _mm_set_epi64x(0x53380D134D2C6DFCULL, 0x2E1B213827B70A85ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][0], M[u][3], 4);
        M[u][1] = _mm_add_epi32(M[u][1], T[u]);
        M[u][1] = _mm_sha256msg2_epu32(M[u][1], M[u][0]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][3] = _mm_sha256msg1_epu32(M[u][3], M[u][0]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][1], _mm_set_epi64x(0x92722C8581C2C92EULL, 0x766A0ABB650A7354ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][1], M[u][0], 4);
        M[u][2] = _mm_add_epi32(M[u][2], T[u]);
        M[u][2] = _mm_sha256msg2_epu32(M[u][2], M[u][1]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][0] = _mm_sha256msg1_epu32(M[u][0], M[u][1]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][2], _mm_set_epi64x(0xC76C51A3C24B8B70ULL, 0xA81A664BA2BFE8A1ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][2], M[u][1], 4);
        M[u][3] = _mm_add_epi32(M[u][3], T[u]);
        M[u][3] = _mm_sha256msg2_epu32(M[u][3], M[u][2]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][1] = _mm_sha256msg1_epu32(M[u][1], M[u][2]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][3], _mm_set_epi64x(0x106AA070F40E3585ULL, 0xD6990624D192E819ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][3], M[u][2], 4);
        M[u][0] = _mm_add_epi32(M[u][0], T[u]);
        M[u][0] = _mm_sha256msg2_epu32(M[u][0], M[u][3]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][2] = _mm_sha256msg1_epu32(M[u][2], M[u][3]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][0], _mm_set_epi64x(0x34B0BCB52748774CULL, 0x1E376C0819A4C116ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][0], M[u][3], 4);
        M[u][1] = _mm_add_epi32(M[u][1], T[u]);
        M[u][1] = _mm_sha256msg2_epu32(M[u][1], M[u][0]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        M[u][3] = _mm_sha256msg1_epu32(M[u][3], M[u][0]);
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][1], _mm_set_epi64x(0x682E6FF35B9CCA4FULL, 0x4ED8AA4A391C0CB3ULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][1], M[u][0], 4);
        M[u][2] = _mm_add_epi32(M[u][2], T[u]);
        M[u][2] = _mm_sha256msg2_epu32(M[u][2], M[u][1]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][2], _mm_set_epi64x(0x8CC7020884C87814ULL, 0x78A5636F748F82EEULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        T[u] = _mm_alignr_epi8(M[u][2], M[u][1], 4);
        M[u][3] = _mm_add_epi32(M[u][3], T[u]);
        M[u][3] = _mm_sha256msg2_epu32(M[u][3], M[u][2]);
    }
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++)
        MS[u] = _mm_add_epi32(M[u][3], _mm_set_epi64x(0xC67178F2BEF9A3F7ULL, 0xA4506CEB90BEFFFAULL));
    for (int u = 0; u < 4; u++)
        S1[u] = _mm_sha256rnds2_epu32(S1[u], S0[u], MS[u]);
    for (int u = 0; u < 4; u++) {
        MS[u] = _mm_shuffle_epi32(MS[u], 0x0E);
        S0[u] = _mm_sha256rnds2_epu32(S0[u], S1[u], MS[u]);
    }
    for (int u = 0; u < 4; u++) {
        __m128i TMP = _mm_loadu_si128((const __m128i *)&H0[0]);
        __m128i ST1i = _mm_loadu_si128((const __m128i *)&H0[4]);
        TMP = _mm_shuffle_epi32(TMP, 0xB1);
        ST1i = _mm_shuffle_epi32(ST1i, 0x1B);
        __m128i A0 = _mm_alignr_epi8(TMP, ST1i, 8);
        __m128i A1 = _mm_blend_epi16(ST1i, TMP, 0xF0);
        S0[u] = _mm_add_epi32(S0[u], A0);
        S1[u] = _mm_add_epi32(S1[u], A1);
        __m128i T2 = _mm_shuffle_epi32(S0[u], 0x1B);
        __m128i T3 = _mm_shuffle_epi32(S1[u], 0xB1);
        __m128i OUT0 = _mm_blend_epi16(T2, T3, 0xF0);
        uint32_t st[4];
        _mm_storeu_si128((__m128i *)st, OUT0);
        out2[u][0] = st[0];
        out2[u][1] = st[1];
    }
}

#endif /* CM_HAVE_SHA_BUILD */

static int cpu_has_sha(void)
{
#if CM_HAVE_SHA_BUILD
    return __builtin_cpu_supports("sha");
#else
    return 0;
#endif
}

int cm_available(void)
{
    return cpu_has_sha() ? 2 : 1; /* 2: hw sha, 1: soft only */
}

/* known-answer check: sha256(32 zero bytes || u64be 7) starts 5069b1eb90236acb */
int cm_selftest(void)
{
    uint32_t w[16];
    memset(w, 0, sizeof(w));
    w[9] = 7;
    w[10] = 0x80000000u;
    w[15] = 320;
    const uint32_t want0 = 0x5069b1ebu, want1 = 0x90236acbu;
    uint32_t got[2];
    sha256_soft(w, got);
    if (got[0] != want0 || got[1] != want1)
        return -1;
#if CM_HAVE_SHA_BUILD
    if (cpu_has_sha()) {
        sha256_ni(w, got);
        if (got[0] != want0 || got[1] != want1)
            return -2;
        uint32_t blk[4][16];
        uint32_t out4[4][2];
        for (int u = 0; u < 4; u++)
            memcpy(blk[u], w, sizeof(w));
        sha256_ni_x4(blk, out4);
        for (int u = 0; u < 4; u++)
            if (out4[u][0] != want0 || out4[u][1] != want1)
                return -3;
    }
#endif
    return 0;
}

static inline uint64_t reject_bound(uint64_t m)
{
    uint64_t rem = (UINT64_MAX % m + 1) % m;
    return UINT64_MAX - rem;
}

/* ------------------------------------------------------------------ */
/* walk engine: 4 slots, refilled from the lane queue                  */

typedef struct {
    int64_t lane;       /* -1: empty */
    int32_t i;          /* current Fisher-Yates position */
    int64_t t;          /* next stream counter */
    double running;     /* suffix mass fixed so far */
    uint32_t epoch;
    int32_t *val;
    uint32_t *stamp;
} Slot;

#define MODE_MASK 0
#define MODE_HIT 1

typedef struct {
    int mode;
    int32_t vocab;
    double thresh;
    int32_t target;
    uint8_t *masks;
    int64_t mask_stride;
    uint8_t *hits;
    const double *probs;
    int64_t budget;
} WalkCtx;

static inline int32_t arr_read(const Slot *s, int32_t x)
{
    return (s->stamp[x] == s->epoch) ? s->val[x] : x;
}

/* returns 1 when the slot's lane is finished; *used = draw consumed */
static inline int slot_step(const WalkCtx *c, Slot *s, uint64_t r, int *used)
{
    *used = 0;
    if (s->running > c->thresh)
        return 1;
    int32_t i = s->i;
    if (i <= 0) {
        if (s->running <= c->thresh) {
            int32_t e0 = arr_read(s, 0);
            if (c->mode == MODE_MASK)
                c->masks[s->lane * c->mask_stride + (e0 >> 3)] |= (uint8_t)(1u << (e0 & 7));
            else if (e0 == c->target)
                c->hits[s->lane] = 1;
        }
        return 1;
    }
    *used = 1;
    s->t++;
    uint64_t m = (uint64_t)i + 1;
    if (r > reject_bound(m))
        return 0;
    int32_t j = (int32_t)(r % m);
    int32_t e = arr_read(s, j);
    if (j != i) {
        int32_t ei = arr_read(s, i);
        s->val[j] = ei;
        s->stamp[j] = s->epoch;
    }
    if (c->mode == MODE_MASK) {
        c->masks[s->lane * c->mask_stride + (e >> 3)] |= (uint8_t)(1u << (e & 7));
    } else if (e == c->target) {
        c->hits[s->lane] = 1;
        return 1;
    }
    s->running += c->probs[e];
    s->i = i - 1;
    return 0;
}

static inline void slot_fill(Slot *s, const uint32_t *keys, int64_t lane,
                             int32_t vocab, uint32_t *epoch_counter,
                             uint32_t wblk[16])
{
    s->lane = lane;
    s->i = vocab - 1;
    s->t = 0;
    s->running = 0.0;
    s->epoch = ++(*epoch_counter);
    for (int k = 0; k < 8; k++)
        wblk[k] = keys[lane * 8 + k];
    wblk[8] = 0;
    wblk[9] = 0;
    wblk[10] = 0x80000000u;
    wblk[11] = 0; wblk[12] = 0; wblk[13] = 0; wblk[14] = 0;
    wblk[15] = 320;
}

static int walk_engine(const uint32_t *keys, int64_t nkeys,
                       const double *probs, int32_t vocab, double sigma,
                       int mode, int32_t target,
                       uint8_t *masks, int64_t mask_stride, uint8_t *hits,
                       int32_t *val4, uint32_t *stamp4, uint32_t *epoch_io,
                       int force_soft)
{
    WalkCtx ctx;
    ctx.mode = mode;
    ctx.vocab = vocab;
    ctx.thresh = 1.0 - sigma;
    ctx.target = target;
    ctx.masks = masks;
    ctx.mask_stride = mask_stride;
    ctx.hits = hits;
    ctx.probs = probs;
    ctx.budget = 4 * (int64_t)vocab + 64;

    Slot slots[4];
    uint32_t wblk[4][16];
    uint32_t epoch = *epoch_io;
    int64_t next_lane = 0;
    int use_x4 = 0;
#if CM_HAVE_SHA_BUILD
    use_x4 = !force_soft && cpu_has_sha();
#else
    (void)force_soft;
#endif

    /* epoch space must cover every refill in this call */
    if (epoch > UINT32_MAX - (uint64_t)nkeys - 8) {
        memset(stamp4, 0, 4 * (size_t)vocab * sizeof(uint32_t));
        epoch = 0;
    }

    for (int u = 0; u < 4; u++) {
        slots[u].lane = -1;
        slots[u].val = val4 + (int64_t)u * vocab;
        slots[u].stamp = stamp4 + (int64_t)u * vocab;
        if (next_lane < nkeys)
            slot_fill(&slots[u], keys, next_lane++, vocab, &epoch, wblk[u]);
    }

    for (;;) {
        int active = 0;
        for (int u = 0; u < 4; u++)
            if (slots[u].lane >= 0)
                active++;
        if (active == 0)
            break;
        uint32_t out2[4][2];
        if (use_x4 && active == 4) {
#if CM_HAVE_SHA_BUILD
            for (int u = 0; u < 4; u++) {
                wblk[u][8] = (uint32_t)((uint64_t)slots[u].t >> 32);
                wblk[u][9] = (uint32_t)((uint64_t)slots[u].t & 0xffffffffu);
            }
            sha256_ni_x4(wblk, out2);
#endif
        } else {
            for (int u = 0; u < 4; u++) {
                if (slots[u].lane < 0)
                    continue;
                wblk[u][8] = (uint32_t)((uint64_t)slots[u].t >> 32);
                wblk[u][9] = (uint32_t)((uint64_t)slots[u].t & 0xffffffffu);
#if CM_HAVE_SHA_BUILD
                if (use_x4)
                    sha256_ni(wblk[u], out2[u]);
                else
                    sha256_soft(wblk[u], out2[u]);
#else
                sha256_soft(wblk[u], out2[u]);
#endif
            }
        }
        for (int u = 0; u < 4; u++) {
            Slot *s = &slots[u];
            if (s->lane < 0)
                continue;
            if (s->t >= ctx.budget) {
                *epoch_io = epoch;
                return -1;
            }
            uint64_t r = ((uint64_t)out2[u][0] << 32) | (uint64_t)out2[u][1];
            int used;
            int fin = slot_step(&ctx, s, r, &used);
            while (fin) {
                if (next_lane < nkeys) {
                    slot_fill(s, keys, next_lane++, vocab, &epoch, wblk[u]);
                    if (!used) {
                        /* unused draw belongs to the old lane's stream; the
                           new lane needs a fresh draw at t=0 */
                    }
                    fin = 0;
                } else {
                    s->lane = -1;
                    fin = 0;
                }
            }
        }
    }
    *epoch_io = epoch;
    return 0;
}

int cm_walk_tail_masks(const uint32_t *keys, int64_t nkeys,
                       const double *probs, int32_t vocab, double sigma,
                       uint8_t *masks, int64_t mask_stride,
                       int32_t *val4, uint32_t *stamp4, uint32_t *epoch_io,
                       int force_soft)
{
    return walk_engine(keys, nkeys, probs, vocab, sigma, MODE_MASK, -1,
                       masks, mask_stride, (uint8_t *)0, val4, stamp4,
                       epoch_io, force_soft);
}

int cm_walk_tail_hits(const uint32_t *keys, int64_t nkeys,
                      const double *probs, int32_t vocab, double sigma,
                      int32_t target, uint8_t *hits,
                      int32_t *val4, uint32_t *stamp4, uint32_t *epoch_io,
                      int force_soft)
{
    return walk_engine(keys, nkeys, probs, vocab, sigma, MODE_HIT, target,
                       (uint8_t *)0, 0, hits, val4, stamp4, epoch_io,
                       force_soft);
}
