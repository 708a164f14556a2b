#ifndef GLIDING_VERTEX_H
#define GLIDING_VERTEX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GvStatus {
  GV_STATUS_OK = 0,
  GV_STATUS_NULL_POINTER = 1,
  GV_STATUS_INVALID_INPUT = 2,
  GV_STATUS_DEGENERATE_GEOMETRY = 3,
  GV_STATUS_INDEX_OUT_OF_RANGE = 4,
  GV_STATUS_INTERNAL = 5,
} GvStatus;

// A growable list of scored, classed quadrilaterals.
typedef struct GvDetectionSet GvDetectionSet;

// Accumulates ground truth and detections over images for mAP.
typedef struct GvEvaluator GvEvaluator;

typedef struct GvPoint {
  double x;
  double y;
} GvPoint;

// Horizontal box as center and size, the four gliding offsets and the
// obliquity factor.
typedef struct GvGlidingRep {
  double x;
  double y;
  double w;
  double h;
  double alpha[4];
  double r;
} GvGlidingRep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static, NUL-terminated name of a status code.
const char *gv_status_name(enum GvStatus status);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len - 1` bytes) and returns the full message length.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t gv_last_error_message(char *buf, size_t len);

// Encodes a convex quadrilateral (4 points, any order or orientation).
//
// # Safety
// `quad` must point to 4 points and `out` to one writable rep.
enum GvStatus gv_encode(const struct GvPoint *quad, struct GvGlidingRep *out);

// Decodes to the oriented quadrilateral; α and r are clamped to [0, 1].
//
// # Safety
// `rep` must point to one rep and `out` to 4 writable points.
enum GvStatus gv_decode(const struct GvGlidingRep *rep, struct GvPoint *out);

// The horizontal box when `r > t_r`, the decoded quadrilateral otherwise.
//
// # Safety
// As [`gv_decode`].
enum GvStatus gv_select(const struct GvGlidingRep *rep, double t_r, struct GvPoint *out);

// IoU of two convex quadrilaterals.
//
// # Safety
// `a` and `b` must each point to 4 points; `out` to one writable double.
enum GvStatus gv_iou(const struct GvPoint *a, const struct GvPoint *b, double *out);

struct GvDetectionSet *gv_detection_set_new(void);

// # Safety
// `set` must come from [`gv_detection_set_new`] and not be freed yet, or be null.
void gv_detection_set_free(struct GvDetectionSet *set);

// # Safety
// `set` must be a live handle; `quad` must point to 4 points.
enum GvStatus gv_detection_set_push(struct GvDetectionSet *set,
                                    const struct GvPoint *quad,
                                    double score,
                                    uint32_t class_id);

// Replaces the contents with the per-class NMS survivors, grouped by class
// id, descending score within a class.
//
// # Safety
// `set` must be a live handle.
enum GvStatus gv_detection_set_nms(struct GvDetectionSet *set, double iou_thresh);

// Number of detections; 0 for a null handle.
//
// # Safety
// `set` must be a live handle or null.
size_t gv_detection_set_len(const struct GvDetectionSet *set);

// # Safety
// `set` must be a live handle; `quad` must point to 4 writable points;
// `score` and `class_id` may be null.
enum GvStatus gv_detection_set_get(const struct GvDetectionSet *set,
                                   size_t index,
                                   struct GvPoint *quad,
                                   double *score,
                                   uint32_t *class_id);

struct GvEvaluator *gv_evaluator_new(void);

// # Safety
// `ev` must come from [`gv_evaluator_new`] and not be freed yet, or be null.
void gv_evaluator_free(struct GvEvaluator *ev);

// # Safety
// `ev` must be a live handle, `image_id` a NUL-terminated string and `quad`
// 4 points.
enum GvStatus gv_evaluator_add_gt(struct GvEvaluator *ev,
                                  const char *image_id,
                                  const struct GvPoint *quad,
                                  uint32_t class_id,
                                  bool difficult);

// # Safety
// As [`gv_evaluator_add_gt`].
enum GvStatus gv_evaluator_add_det(struct GvEvaluator *ev,
                                   const char *image_id,
                                   const struct GvPoint *quad,
                                   double score,
                                   uint32_t class_id);

// Mean AP over classes with at least one non-difficult ground truth.
// `voc07` non-zero selects 11-point interpolation, zero the all-points envelope.
//
// # Safety
// `ev` must be a live handle and `out` one writable double.
enum GvStatus gv_evaluator_map(const struct GvEvaluator *ev,
                               double iou_thresh,
                               int32_t voc07,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLIDING_VERTEX_H */
