#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sfcn/infer.hpp"
#include "sfcn/rng.hpp"
#include "sfcn/tensor.hpp"

namespace sfcn {

struct AnnotatedImage {
    Tensor pixels;  // [3,H,W], values in [0,1]
    std::vector<Annotation> nuclei;
    std::string image_id;
};

struct MaskPair {
    Tensor det_mask;  // [H,W], 0/1
    Tensor cls_mask;  // [H,W], 0..K
};

struct CategoryAppearance {
    std::array<double, 3> color = {0.3, 0.3, 0.3};
    double radius_min = 2.2;
    double radius_max = 3.4;
    double texture_amplitude = 0.04;
};

struct SynthConfig {
    int image_height = 32;
    int image_width = 32;
    int nuclei_min = 2;
    int nuclei_max = 4;
    double min_separation = 10.0;  // centroid spacing, must be >= 4
    std::array<double, 3> background_color = {0.82, 0.76, 0.84};
    double background_texture = 0.05;  // low-frequency amplitude
    double background_noise = 0.02;    // per-pixel noise sigma
    std::vector<double> mixture_weights = {0.343, 0.255, 0.311, 0.091};
    std::vector<CategoryAppearance> categories;  // defaults filled by validate()
    // unannotated debris blobs, saturated but off-hue; the hard negatives of
    // the detection task
    int distractor_min = 1;
    int distractor_max = 2;
    std::vector<std::array<double, 3>> distractor_colors = {
        {0.50, 0.46, 0.18}, {0.62, 0.40, 0.14}, {0.46, 0.43, 0.46}};
    double color_jitter = 0.05;  // per-blob color wobble
    // per-nucleus pull toward one other category's color, uniform in
    // [0, color_mix]; ambiguity stays below 0.5 so the nearest category
    // color is always the labeled one
    double color_mix = 0.0;
    // large translucent patches of diluted category hue; pixel-level
    // confusable with nuclei, blob-level distinct
    int wash_min = 0;
    int wash_max = 0;
    double wash_alpha = 0.35;
    double wash_radius_min = 5.0;
    double wash_radius_max = 9.0;
    int mask_radius = 3;
    std::array<int, 3> split_ratio = {7, 1, 2};

    int num_categories() const { return static_cast<int>(mixture_weights.size()); }
    void validate();  // fills category defaults, checks invariants
};

// Distinct base colors; the documented separability margin is the minimum
// pairwise L2 distance (>= 0.34), an order of magnitude above the per-nucleus
// color jitter.
std::vector<CategoryAppearance> default_category_appearance();

std::vector<AnnotatedImage> generate(const SynthConfig& config, int n_images,
                                     std::uint64_t master_seed);

MaskPair make_masks(const std::vector<Annotation>& annotations, int h, int w, int radius = 3);

struct AugmentDraw {
    double zoom = 1.0;
    double angle_deg = 0.0;
    double shear = 0.0;
    bool flip_h = false;
    bool flip_v = false;
    std::array<double, 3> channel_shift = {0.0, 0.0, 0.0};

    bool is_identity() const;
};

AugmentDraw sample_augment(Rng& rng);

// Geometric transforms hit image (bilinear) and both masks (nearest) with the
// same inverse map; channel shift hits the image only. Identity draws return
// exact copies.
void augment_with(const AugmentDraw& draw, const std::array<double, 3>& fill, Tensor& image,
                  MaskPair& masks);

void augment(Rng& rng, const std::array<double, 3>& fill, Tensor& image, MaskPair& masks);

struct Patch {
    Tensor image;
    MaskPair masks;
    int row0 = 0;
    int col0 = 0;
};

std::vector<Patch> crop_patches(const Tensor& image, const MaskPair& masks, int size, int stride);

// On-disk dataset: manifest.json + img_<seed>_<index>.png payloads +
// train/val/test id lists. Schema documented in the README.
struct DatasetSplits {
    std::vector<std::string> train, val, test;
};

void save_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images,
                  const SynthConfig& config, std::uint64_t master_seed);

std::vector<AnnotatedImage> load_dataset(const std::string& dir);
DatasetSplits load_splits(const std::string& dir);
std::vector<AnnotatedImage> load_split(const std::string& dir, const std::string& split_name);
int dataset_num_categories(const std::string& dir);

}  // namespace sfcn
