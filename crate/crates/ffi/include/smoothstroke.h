#ifndef SMOOTHSTROKE_H
#define SMOOTHSTROKE_H

#include <stdbool.h>
#include <stddef.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Output buffer too small; the required size has been written.
   */
  SS_STATUS_BUFFER_TOO_SMALL = 3,
  SS_STATUS_SPLINE = 4,
  SS_STATUS_SMOOTHING = 5,
  SS_STATUS_SCENE = 6,
  SS_STATUS_IO = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

/**
 * Smoothing operator bound to a spline's control-point layout.
 */
typedef struct SsGram SsGram;

typedef struct SsScene SsScene;

/**
 * Spline built from key-points, with its cubic Bézier chain.
 */
typedef struct SsSpline SsSpline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ss_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Builds a spline of the given degree from `count` key-points laid out as
 * `x, y, r` triples.
 *
 * # Safety
 * `keypoints` must hold `3 * count` doubles; `out_spline` must be writable.
 */
enum SsStatus ss_spline_new(const double *keypoints,
                            size_t count,
                            size_t degree,
                            bool closed,
                            struct SsSpline **out_spline);

/**
 * # Safety
 * `spline` must come from [`ss_spline_new`] and not be freed twice.
 */
void ss_spline_free(struct SsSpline *spline);

/**
 * Parameter domain `[lo, hi]`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum SsStatus ss_spline_domain(const struct SsSpline *spline, double *lo, double *hi);

/**
 * Evaluates `x, y, r` at `u` into `point[3]`.
 *
 * # Safety
 * `point` must hold 3 doubles.
 */
enum SsStatus ss_spline_eval(const struct SsSpline *spline, double u, double *point);

/**
 * Control points (`3 * n` doubles). `needed` receives the double count.
 *
 * # Safety
 * `buf` must hold `cap` doubles; `needed` may be null.
 */
enum SsStatus ss_spline_control(const struct SsSpline *spline,
                                double *buf,
                                size_t cap,
                                size_t *needed);

/**
 * Cubic Bézier chain as `3 * segments + 1` points of `x, y, r`; consecutive
 * segments share end points. `needed` receives the double count.
 *
 * # Safety
 * `buf` must hold `cap` doubles; `needed` may be null.
 */
enum SsStatus ss_spline_bezier(const struct SsSpline *spline,
                               double *buf,
                               size_t cap,
                               size_t *needed);

/**
 * Smoothing operator of derivative order `order` for `spline`'s layout;
 * `pspline` selects the difference-penalty approximation.
 *
 * # Safety
 * `spline` must be live; `out_gram` writable.
 */
enum SsStatus ss_gram_new(const struct SsSpline *spline,
                          size_t order,
                          bool pspline,
                          struct SsGram **out_gram);

/**
 * # Safety
 * `gram` must come from [`ss_gram_new`] and not be freed twice.
 */
void ss_gram_free(struct SsGram *gram);

/**
 * Number of control points the operator expects.
 *
 * # Safety
 * `gram` must be live.
 */
enum SsStatus ss_gram_control_count(const struct SsGram *gram, size_t *count);

/**
 * Smoothing cost of `count` control points. If `grad` is non-null it
 * receives `3 * count` doubles.
 *
 * # Safety
 * `control` holds `3 * count` doubles; `grad` is null or the same size.
 */
enum SsStatus ss_gram_cost(const struct SsGram *gram,
                           const double *control,
                           size_t count,
                           double *value,
                           double *grad);

/**
 * Parses a scene from its JSON form.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out_scene` writable.
 */
enum SsStatus ss_scene_from_json(const char *json, struct SsScene **out_scene);

/**
 * Loads a scene file (JSON, or an SVG written by the exporter).
 *
 * # Safety
 * `path` is a NUL-terminated string; `out_scene` writable.
 */
enum SsStatus ss_scene_load(const char *path, struct SsScene **out_scene);

/**
 * # Safety
 * `scene` must come from a constructor and not be freed twice.
 */
void ss_scene_free(struct SsScene *scene);

/**
 * Canvas size and channel count (1 gray, 3 RGB).
 *
 * # Safety
 * Pointers must be valid.
 */
enum SsStatus ss_scene_size(const struct SsScene *scene,
                            size_t *width,
                            size_t *height,
                            size_t *channels);

/**
 * Renders to row-major interleaved doubles in `[0, 1]`, `per_segment`
 * samples per Bézier segment.
 *
 * # Safety
 * `buf` holds `cap` doubles; `needed` may be null.
 */
enum SsStatus ss_scene_render(const struct SsScene *scene,
                              size_t per_segment,
                              double *buf,
                              size_t cap,
                              size_t *needed);

/**
 * Writes the SVG document, NUL-terminated. `needed` receives the byte
 * count including the terminator.
 *
 * # Safety
 * `buf` holds `cap` bytes; `needed` may be null.
 */
enum SsStatus ss_scene_to_svg(const struct SsScene *scene,
                              size_t per_segment,
                              char *buf,
                              size_t cap,
                              size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOOTHSTROKE_H */
