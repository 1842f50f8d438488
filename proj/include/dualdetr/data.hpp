#pragma once

#include <map>
#include <string>
#include <vector>

#include "dualdetr/losses.hpp"

namespace dualdetr {

struct FeatureSequence {
    int t = 0;  // snippets
    int d = 0;  // channels
    std::vector<double> values;  // row-major t x d
    double stride_sec = 1.0;     // seconds between snippets
};

struct ActionInstance {
    double start_sec = 0;
    double end_sec = 0;
    int class_id = 0;
};

struct VideoRecord {
    std::string id;
    FeatureSequence features;
    std::vector<ActionInstance> annotations;
    double duration_sec = 0;
    void validate(int num_classes) const;
};

struct SynthParams {
    uint64_t seed = 42;
    int num_videos = 200;
    int video_offset = 0;  // first video index; signatures stay fixed by the
                           // seed, so offset ranges give held-out videos of
                           // the same task
    int num_classes = 3;
    int t = 128;
    int d = 64;
    int overlap_level = 2;       // max simultaneous instances
    double noise_sigma = 0.1;
    int min_instances = 3;
    int max_instances = 12;
    double min_dur_frac = 0.05;  // instance duration as a fraction of t
    double max_dur_frac = 0.20;
    double stride_sec = 1.0;
};

// Class signatures are orthonormal unit vectors fixed by the seed; each
// instance contributes its signature shaped by a raised-cosine envelope over
// its extent, plus white noise. Deterministic per seed.
std::vector<VideoRecord> synth_generate(const SynthParams& params);

// Binary feature file: magic "DDTRFEAT", little-endian u32 T and D, then
// T*D little-endian f32 values, row-major.
void save_features(const std::string& path, const FeatureSequence& fs);
FeatureSequence load_features(const std::string& path);

// Line-delimited "video_id,start_seconds,end_seconds,class_id" with '#'
// comments; class ids validated against the vocabulary size.
void save_annotations(const std::string& path, const std::vector<VideoRecord>& videos);
std::map<std::string, std::vector<ActionInstance>> load_annotations(const std::string& path,
                                                                    int num_classes);
void save_vocabulary(const std::string& path, int num_classes);
std::vector<std::string> load_vocabulary(const std::string& path);

struct Window {
    std::string video_id;
    int start = 0;   // first snippet index
    int length = 0;  // W snippets (zero-padded when the video is shorter)
    int valid = 0;   // non-padded snippet count
    std::vector<double> features;  // W x D
    GtSet gts;                     // window-normalized coordinates
    double offset_sec = 0;
    double span_sec = 0;  // (W-1) * stride; global = offset + p * span
};

// Stride = round(W * stride_ratio) >= 1; a final end-aligned window is added
// when the last regular one stops short. Annotations are clipped and kept
// when the clipped extent spans at least one snippet.
std::vector<Window> make_windows(const VideoRecord& video, int w, double stride_ratio);

}  // namespace dualdetr
