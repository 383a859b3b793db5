/* Encodes one second of a 440 Hz tone, prints frame count and first frame,
   then decodes to a Mel spectrogram and prints its shape. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "omni_ffi.h"

static int fail(const char *what, OmniStatus s) {
    fprintf(stderr, "%s failed (%d): %s\n", what, (int)s, omni_last_error_message());
    return 1;
}

int main(void) {
    enum { RATE = 16000 };
    double *wave = malloc(sizeof(double) * RATE);
    for (int i = 0; i < RATE; i++) wave[i] = 0.5 * sin(2.0 * M_PI * 440.0 * i / RATE);

    OmniCodec *codec = NULL;
    OmniStatus s = omni_codec_new(7, &codec);
    if (s != OMNI_STATUS_OK) return fail("codec_new", s);

    OmniTokens *tokens = NULL;
    s = omni_codec_encode(codec, wave, RATE, RATE, &tokens);
    if (s != OMNI_STATUS_OK) return fail("encode", s);

    size_t needed = 0;
    s = omni_tokens_codes(tokens, NULL, 0, &needed);
    if (s != OMNI_STATUS_BUFFER_TOO_SMALL) return fail("codes size probe", s);
    uint32_t *codes = malloc(sizeof(uint32_t) * needed);
    s = omni_tokens_codes(tokens, codes, needed, &needed);
    if (s != OMNI_STATUS_OK) return fail("codes", s);

    size_t depth = omni_codec_depth(codec);
    printf("frames %zu depth %zu\n", omni_tokens_len(tokens), depth);

    size_t rows = 0, cols = 0;
    omni_codec_decode_mel(codec, tokens, NULL, 0, &rows, &cols, &needed);
    double *mel = malloc(sizeof(double) * needed);
    s = omni_codec_decode_mel(codec, tokens, mel, needed, &rows, &cols, &needed);
    if (s != OMNI_STATUS_OK) return fail("decode_mel", s);
    printf("mel %zu x %zu\n", rows, cols);

    double score = 0.0;
    s = omni_normalize_score(1.0, 5.0, 5.0, &score);
    printf("bad normalize status %d\n", (int)s);

    free(mel);
    free(codes);
    free(wave);
    omni_tokens_free(tokens);
    omni_codec_free(codec);
    return 0;
}
