#ifndef OMNI_FFI_H
#define OMNI_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum OmniStatus {
  OMNI_STATUS_OK = 0,
  OMNI_STATUS_NULL_POINTER = 1,
  OMNI_STATUS_INVALID_ARGUMENT = 2,
  OMNI_STATUS_BUFFER_TOO_SMALL = 3,
  OMNI_STATUS_IO = 4,
  OMNI_STATUS_FORMAT = 5,
  OMNI_STATUS_NUMERIC = 6,
  OMNI_STATUS_CONFIG = 7,
  OMNI_STATUS_PANIC = 8,
} OmniStatus;

// Trained or freshly initialized codec.
typedef struct OmniCodec OmniCodec;

// Sequence of token frames, each holding one code per quantizer layer.
typedef struct OmniTokens OmniTokens;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *omni_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *omni_version(void);

// New codec with the default configuration and the given seed.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum OmniStatus omni_codec_new(uint64_t seed, struct OmniCodec **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum OmniStatus omni_codec_load(const char *path, struct OmniCodec **out);

// # Safety
// `codec` must come from this library; `path` must be NUL-terminated.
enum OmniStatus omni_codec_save(const struct OmniCodec *codec, const char *path);

// # Safety
// `codec` must come from this library or be null; it is invalid afterwards.
void omni_codec_free(struct OmniCodec *codec);

// Number of quantizer layers, which is the number of codes per frame.
//
// # Safety
// `codec` must come from this library or be null (returns 0).
size_t omni_codec_depth(const struct OmniCodec *codec);

// Encodes mono samples at `sample_rate` Hz into token frames.
//
// # Safety
// `samples` must point to `n` readable doubles and `out` be writable.
enum OmniStatus omni_codec_encode(const struct OmniCodec *codec,
                                  const double *samples,
                                  size_t n,
                                  uint32_t sample_rate,
                                  struct OmniTokens **out);

// Decodes tokens to a natural-log Mel spectrogram, row-major `[n_mels, frames]`.
//
// # Safety
// Handles must come from this library; `buf` holds `cap` doubles or is
// null; `rows`, `cols` and `needed` must be writable.
enum OmniStatus omni_codec_decode_mel(const struct OmniCodec *codec,
                                      const struct OmniTokens *tokens,
                                      double *buf,
                                      size_t cap,
                                      size_t *rows,
                                      size_t *cols,
                                      size_t *needed);

// Decodes tokens to a waveform through Griffin-Lim phase recovery.
//
// # Safety
// As for [`omni_codec_decode_mel`]; `sample_rate` must be writable.
enum OmniStatus omni_codec_decode_wave(const struct OmniCodec *codec,
                                       const struct OmniTokens *tokens,
                                       size_t gl_iters,
                                       double *buf,
                                       size_t cap,
                                       uint32_t *sample_rate,
                                       size_t *needed);

// Builds tokens from `frames * depth` codes laid out frame by frame.
//
// # Safety
// `codes` must point to `frames * depth` readable values; `out` writable.
enum OmniStatus omni_tokens_from_codes(const uint32_t *codes,
                                       size_t frames,
                                       size_t depth,
                                       struct OmniTokens **out);

// # Safety
// `path` must be NUL-terminated and `out` writable.
enum OmniStatus omni_tokens_read(const char *path, struct OmniTokens **out);

// # Safety
// `tokens` must come from this library; `path` must be NUL-terminated.
enum OmniStatus omni_tokens_write(const struct OmniTokens *tokens, const char *path);

// Number of frames, or 0 for null.
//
// # Safety
// `tokens` must come from this library or be null.
size_t omni_tokens_len(const struct OmniTokens *tokens);

// Copies all codes, frame by frame, as `frames * depth` values.
//
// # Safety
// `tokens` must come from this library; `buf` holds `cap` values or is
// null; `needed` must be writable.
enum OmniStatus omni_tokens_codes(const struct OmniTokens *tokens,
                                  uint32_t *buf,
                                  size_t cap,
                                  size_t *needed);

// # Safety
// `tokens` must come from this library or be null; it is invalid afterwards.
void omni_tokens_free(struct OmniTokens *tokens);

// `(x - min + 10) / (max - min + 10)` for benchmark scores.
//
// # Safety
// `out` must be writable.
enum OmniStatus omni_normalize_score(double x, double min, double max, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNI_FFI_H */
