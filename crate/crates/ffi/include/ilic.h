#ifndef ILIC_H
#define ILIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum IlicStatus {
  ILIC_STATUS_OK = 0,
  ILIC_STATUS_NULL_POINTER = 1,
  ILIC_STATUS_INVALID_ARGUMENT = 2,
  ILIC_STATUS_IO = 3,
  ILIC_STATUS_FORMAT = 4,
  ILIC_STATUS_CORRUPT = 5,
  ILIC_STATUS_SHAPE = 6,
  ILIC_STATUS_CONFIG = 7,
  ILIC_STATUS_INTERNAL = 8,
} IlicStatus;

// Opaque model handle.
typedef struct IlicModel IlicModel;

// Bytes owned by the library.
typedef struct IlicBuffer {
  uint8_t *data;
  size_t len;
} IlicBuffer;

// Interleaved RGB8 image owned by the library; `height * width * 3` bytes.
typedef struct IlicImage {
  uint8_t *data;
  size_t height;
  size_t width;
} IlicImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *ilic_last_error(void);

// Library version as a static string.
const char *ilic_version(void);

// Loads a checkpoint written by the trainer.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum IlicStatus ilic_model_load(const char *path, struct IlicModel **out);

// Builds a freshly initialised model from `key = value` configuration text
// (null for defaults).
//
// # Safety
// `config` must be null or NUL-terminated; `out` must be valid.
enum IlicStatus ilic_model_init(const char *config, uint64_t seed, struct IlicModel **out);

// Writes the model as a checkpoint.
//
// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum IlicStatus ilic_model_save(const struct IlicModel *model, const char *path);

// Eight-byte model identifier stored in every bitstream.
//
// # Safety
// `model` must come from this library; `out` must hold 8 bytes.
enum IlicStatus ilic_model_id(const struct IlicModel *model, uint8_t *out);

// # Safety
// `model` must be null or come from this library, and not be used again.
void ilic_model_free(struct IlicModel *model);

// Compresses an interleaved RGB8 image into a container bitstream.
//
// # Safety
// `rgb` must hold `height * width * 3` bytes; `out` must be valid.
enum IlicStatus ilic_encode(const struct IlicModel *model,
                            const uint8_t *rgb,
                            size_t height,
                            size_t width,
                            uint64_t noise_seed,
                            struct IlicBuffer *out);

// Decompresses a container bitstream into an interleaved RGB8 image.
//
// # Safety
// `data` must hold `len` bytes; `out` must be valid.
enum IlicStatus ilic_decode(const struct IlicModel *model,
                            const uint8_t *data,
                            size_t len,
                            struct IlicImage *out);

// # Safety
// `buf` must be null or filled by this library; it is reset to empty.
void ilic_buffer_free(struct IlicBuffer *buf);

// # Safety
// `img` must be null or filled by this library; it is reset to empty.
void ilic_image_free(struct IlicImage *img);

// PSNR in dB between two RGB8 images of the same extents, capped at 100.
//
// # Safety
// Both images must hold `height * width * 3` bytes; `out` must be valid.
enum IlicStatus ilic_psnr(const uint8_t *a,
                          const uint8_t *b,
                          size_t height,
                          size_t width,
                          double *out);

// MS-SSIM between two RGB8 images; `scales` (may be null) receives the
// number of scales used.
//
// # Safety
// Both images must hold `height * width * 3` bytes; `out` must be valid.
enum IlicStatus ilic_ms_ssim(const uint8_t *a,
                             const uint8_t *b,
                             size_t height,
                             size_t width,
                             double *out,
                             size_t *scales);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ILIC_H */
