#pragma once

#include "dualdetr/checkpoint.hpp"
#include "dualdetr/eval.hpp"
#include "dualdetr/train.hpp"

namespace dualdetr {

// Dataset directory layout:
//   classes.txt         one class name per line
//   annotations.csv     video_id,start_seconds,end_seconds,class_id
//   features/<id>.feat  binary feature files
//   manifest.txt        "<id> <path> <T> <D> <stride_sec> <fnv64 digest>"
void save_dataset(const std::string& dir, const std::vector<VideoRecord>& videos,
                  const std::string& config_echo, bool overwrite);
std::vector<VideoRecord> load_dataset(const std::string& dir, int num_classes);

// Temporarily turns parameter gradients off so forward passes build no graph.
class InferenceGuard {
public:
    explicit InferenceGuard(DualDetrModel& model);
    ~InferenceGuard();
    InferenceGuard(const InferenceGuard&) = delete;
    InferenceGuard& operator=(const InferenceGuard&) = delete;

private:
    DualDetrModel& model_;
    std::vector<bool> saved_;
};

std::vector<Window> build_training_windows(const std::vector<VideoRecord>& videos,
                                           const RunConfig& cfg);

// Windowed inference at the inference stride; per-video concatenated
// detections in global seconds, no NMS.
PredictionsByVideo predict_videos(DualDetrModel& model, const std::vector<VideoRecord>& videos,
                                  const RunConfig& cfg);

// Full evaluation protocol: windowed inference, cross-window assembly,
// detection mAP over the tIoU grid, and segmentation mAP.
EvalReport evaluate_model(DualDetrModel& model, const std::vector<VideoRecord>& videos,
                          const RunConfig& cfg);

AnnotationsByVideo annotations_of(const std::vector<VideoRecord>& videos);

}  // namespace dualdetr
