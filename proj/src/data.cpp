#include "sfcn/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "sfcn/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sfcn {

std::vector<CategoryAppearance> default_category_appearance() {
    std::vector<CategoryAppearance> cats(4);
    cats[0].color = {0.46, 0.14, 0.56};  // epithelial: violet
    cats[1].color = {0.14, 0.26, 0.62};  // fibroblast: blue
    cats[2].color = {0.58, 0.14, 0.26};  // inflammatory: crimson
    cats[3].color = {0.12, 0.46, 0.38};  // miscellaneous: teal
    return cats;
}

void SynthConfig::validate() {
    if (image_height < 8 || image_width < 8)
        throw std::invalid_argument("synth: image size too small");
    if (nuclei_min < 0 || nuclei_max < nuclei_min)
        throw std::invalid_argument("synth: bad nuclei count range");
    if (min_separation < 4.0)
        throw std::invalid_argument("synth: min_separation must be >= 4 pixels");
    if (mask_radius < 1) throw std::invalid_argument("synth: mask_radius must be >= 1");
    double wsum = 0.0;
    for (double w : mixture_weights) {
        if (w < 0.0) throw std::invalid_argument("synth: negative mixture weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-6)
        throw std::invalid_argument("synth: mixture weights must sum to 1");
    if (categories.empty()) {
        categories = default_category_appearance();
        categories.resize(mixture_weights.size());
        for (std::size_t i = 4; i < categories.size(); ++i)
            categories[i].color = {0.3 + 0.1 * static_cast<double>(i % 3), 0.2, 0.3};
    }
    if (categories.size() != mixture_weights.size())
        throw std::invalid_argument("synth: one appearance entry per mixture weight required");
    for (const auto& c : categories)
        if (!(c.radius_min >= 1.0 && c.radius_max >= c.radius_min))
            throw std::invalid_argument("synth: bad nucleus radius range");
    if (distractor_min < 0 || distractor_max < distractor_min)
        throw std::invalid_argument("synth: bad distractor count range");
    if (distractor_max > 0 && distractor_colors.empty())
        throw std::invalid_argument("synth: distractors need at least one color");
    if (color_jitter < 0.0) throw std::invalid_argument("synth: negative color jitter");
    if (color_mix < 0.0 || color_mix >= 0.5)
        throw std::invalid_argument("synth: color_mix must be in [0, 0.5)");
    if (wash_min < 0 || wash_max < wash_min)
        throw std::invalid_argument("synth: bad wash count range");
    if (wash_max > 0 && !(wash_radius_min >= 1.0 && wash_radius_max >= wash_radius_min))
        throw std::invalid_argument("synth: bad wash radius range");
    if (wash_alpha < 0.0 || wash_alpha > 1.0)
        throw std::invalid_argument("synth: wash_alpha must be in [0,1]");
    if (split_ratio[0] <= 0 || split_ratio[1] < 0 || split_ratio[2] < 0)
        throw std::invalid_argument("synth: bad split ratio");
}

namespace {

// coarse-grid value noise, bilinearly upsampled
Eigen::ArrayXd low_freq_field(Rng& rng, int h, int w, int grid) {
    Eigen::ArrayXd coarse(grid * grid);
    for (int i = 0; i < grid * grid; ++i) coarse[i] = rng.uniform(-1.0, 1.0);
    Eigen::ArrayXd field(static_cast<Eigen::Index>(h) * w);
    for (int r = 0; r < h; ++r) {
        const double gy = (grid - 1) * static_cast<double>(r) / std::max(1, h - 1);
        const int y0 = std::min(static_cast<int>(gy), grid - 2);
        const double fy = gy - y0;
        for (int c = 0; c < w; ++c) {
            const double gx = (grid - 1) * static_cast<double>(c) / std::max(1, w - 1);
            const int x0 = std::min(static_cast<int>(gx), grid - 2);
            const double fx = gx - x0;
            const double v00 = coarse[y0 * grid + x0], v01 = coarse[y0 * grid + x0 + 1];
            const double v10 = coarse[(y0 + 1) * grid + x0], v11 = coarse[(y0 + 1) * grid + x0 + 1];
            field[static_cast<Eigen::Index>(r) * w + c] =
                (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    }
    return field;
}

constexpr int kPlacementMargin = 4;
constexpr double kEdgeSoftness = 6.0;

}  // namespace

std::vector<AnnotatedImage> generate(const SynthConfig& config_in, int n_images,
                                     std::uint64_t master_seed) {
    SynthConfig config = config_in;
    config.validate();
    const int h = config.image_height, w = config.image_width;
    const Eigen::Index m = static_cast<Eigen::Index>(h) * w;

    std::vector<AnnotatedImage> out;
    out.reserve(static_cast<std::size_t>(n_images));
    for (int idx = 0; idx < n_images; ++idx) {
        Rng rng(derive_seed(master_seed, seed_stream::synth, static_cast<std::uint64_t>(idx)));
        AnnotatedImage img;
        img.image_id = "img_" + std::to_string(master_seed) + "_" + std::to_string(idx);
        img.pixels = Tensor({3, h, w});

        // background: tinted base + low-frequency field + pixel noise
        Eigen::ArrayXd field = low_freq_field(rng, h, w, 5);
        for (int ch = 0; ch < 3; ++ch) {
            auto plane = img.pixels.value().segment(ch * m, m);
            plane = config.background_color[ch] + config.background_texture * field;
            for (Eigen::Index i = 0; i < m; ++i)
                plane[i] += config.background_noise * rng.normal();
        }

        // translucent hue washes: category-colored at pixel level, nothing
        // like a nucleus at blob level
        const long n_wash = rng.uniform_int(config.wash_min, config.wash_max);
        for (long iw = 0; iw < n_wash; ++iw) {
            const int wr = static_cast<int>(rng.uniform_int(0, h - 1));
            const int wc = static_cast<int>(rng.uniform_int(0, w - 1));
            const double rad = rng.uniform(config.wash_radius_min, config.wash_radius_max);
            const auto& color =
                config.categories[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<long>(config.categories.size()) - 1))].color;
            for (int r = std::max(0, wr - static_cast<int>(rad) - 2);
                 r <= std::min(h - 1, wr + static_cast<int>(rad) + 2); ++r) {
                for (int c = std::max(0, wc - static_cast<int>(rad) - 2);
                     c <= std::min(w - 1, wc + static_cast<int>(rad) + 2); ++c) {
                    const double dy = r - wr, dx = c - wc;
                    const double dd = std::sqrt(dx * dx + dy * dy) / rad;
                    const double a =
                        config.wash_alpha / (1.0 + std::exp(3.0 * (dd - 1.0)));
                    if (a < 1e-3) continue;
                    const Eigen::Index at = static_cast<Eigen::Index>(r) * w + c;
                    for (int ch = 0; ch < 3; ++ch) {
                        double& px = img.pixels.value()[ch * m + at];
                        px = a * color[static_cast<std::size_t>(ch)] + (1.0 - a) * px;
                    }
                }
            }
        }

        // nucleus placement with pairwise separation, rejection-sampled
        const long n_nuclei = rng.uniform_int(config.nuclei_min, config.nuclei_max);
        const long n_distract = rng.uniform_int(config.distractor_min, config.distractor_max);
        const int lo_r = kPlacementMargin, hi_r = h - 1 - kPlacementMargin;
        const int lo_c = kPlacementMargin, hi_c = w - 1 - kPlacementMargin;
        if (n_nuclei > 0 && (hi_r < lo_r || hi_c < lo_c))
            throw std::runtime_error("synth: image too small for nucleus placement");
        const double sep2 = config.min_separation * config.min_separation;
        long attempts = 0, stuck = 0;
        const long n_blobs = n_nuclei + n_distract;
        const long max_attempts = 4000 * std::max(n_blobs, 1L);
        std::vector<std::pair<int, int>> placed;
        while (static_cast<long>(placed.size()) < n_blobs) {
            if (++attempts > max_attempts)
                throw std::runtime_error("synth: infeasible nucleus packing for image " +
                                         img.image_id);
            const int r = static_cast<int>(rng.uniform_int(lo_r, hi_r));
            const int c = static_cast<int>(rng.uniform_int(lo_c, hi_c));
            bool ok = true;
            for (const auto& [pr, pc] : placed) {
                const double dr = pr - r, dc = pc - c;
                if (dr * dr + dc * dc < sep2) {
                    ok = false;
                    break;
                }
            }
            if (!ok) {
                // an early placement can block the rest; restart the layout
                if (++stuck > 400) {
                    placed.clear();
                    stuck = 0;
                }
                continue;
            }
            stuck = 0;
            placed.emplace_back(r, c);
        }
        std::vector<std::pair<int, int>> distractors(placed.begin() + n_nuclei, placed.end());
        placed.resize(static_cast<std::size_t>(n_nuclei));
        for (const auto& [r, c] : placed) {
            Annotation a;
            a.row = r;
            a.col = c;
            a.category = rng.categorical(config.mixture_weights) + 1;
            img.nuclei.push_back(a);
        }

        auto render_blob = [&](int row, int col, const std::array<double, 3>& base,
                               double r_min, double r_max, double tex_amp) {
            const double a = rng.uniform(r_min, r_max);
            const double b = rng.uniform(r_min, r_max);
            const double theta = rng.uniform(0.0, M_PI);
            const double ct = std::cos(theta), st = std::sin(theta);
            std::array<double, 3> color = base;
            for (auto& v : color) v += rng.uniform(-config.color_jitter, config.color_jitter);
            const int reach = static_cast<int>(std::ceil(std::max(a, b))) + 2;
            for (int r = std::max(0, row - reach); r <= std::min(h - 1, row + reach); ++r) {
                for (int c = std::max(0, col - reach); c <= std::min(w - 1, col + reach); ++c) {
                    const double dy = r - row, dx = c - col;
                    const double xr = dx * ct + dy * st;
                    const double yr = -dx * st + dy * ct;
                    const double d = std::sqrt((xr / a) * (xr / a) + (yr / b) * (yr / b));
                    const double alpha = 1.0 / (1.0 + std::exp(kEdgeSoftness * (d - 1.0)));
                    if (alpha < 1e-3) continue;
                    const double tex = rng.uniform(-tex_amp, tex_amp);
                    const Eigen::Index at = static_cast<Eigen::Index>(r) * w + c;
                    for (int ch = 0; ch < 3; ++ch) {
                        double& px = img.pixels.value()[ch * m + at];
                        px = alpha * (color[static_cast<std::size_t>(ch)] + tex) +
                             (1.0 - alpha) * px;
                    }
                }
            }
        };

        const CategoryAppearance& ref = config.categories[0];
        for (const auto& [dr, dc] : distractors) {
            const auto& color = config.distractor_colors[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<long>(config.distractor_colors.size()) - 1))];
            render_blob(dr, dc, color, ref.radius_min, ref.radius_max, ref.texture_amplitude);
        }

        // soft-edged rotated ellipses with category color + jitter + texture
        for (const auto& nucleus : img.nuclei) {
            const CategoryAppearance& app =
                config.categories[static_cast<std::size_t>(nucleus.category - 1)];
            std::array<double, 3> color = app.color;
            if (config.color_mix > 0.0 && config.categories.size() > 1) {
                long other = rng.uniform_int(0, static_cast<long>(config.categories.size()) - 2);
                if (other >= nucleus.category - 1) ++other;
                const double u = rng.uniform(0.0, config.color_mix);
                const auto& oc = config.categories[static_cast<std::size_t>(other)].color;
                for (int ch = 0; ch < 3; ++ch)
                    color[static_cast<std::size_t>(ch)] =
                        (1.0 - u) * color[static_cast<std::size_t>(ch)] +
                        u * oc[static_cast<std::size_t>(ch)];
            }
            render_blob(nucleus.row, nucleus.col, color, app.radius_min, app.radius_max,
                        app.texture_amplitude);
        }
        img.pixels.value() = img.pixels.value().cwiseMax(0.0).cwiseMin(1.0);
        out.push_back(std::move(img));
    }
    return out;
}

MaskPair make_masks(const std::vector<Annotation>& annotations, int h, int w, int radius) {
    if (radius < 1) throw std::invalid_argument("make_masks: radius must be >= 1");
    MaskPair mp;
    mp.det_mask = Tensor({h, w});
    mp.cls_mask = Tensor({h, w});

    // nearest-centroid assignment; ties by lower category then lower index
    struct Best {
        double d2 = -1.0;
        int category = 0;
        int index = 0;
    };
    std::vector<Best> best(static_cast<std::size_t>(h) * w);
    const double r2 = static_cast<double>(radius) * radius;
    for (int i = 0; i < static_cast<int>(annotations.size()); ++i) {
        const Annotation& a = annotations[i];
        if (a.row < 0 || a.row >= h || a.col < 0 || a.col >= w)
            throw std::invalid_argument("make_masks: centroid out of bounds");
        for (int r = std::max(0, a.row - radius); r <= std::min(h - 1, a.row + radius); ++r) {
            for (int c = std::max(0, a.col - radius); c <= std::min(w - 1, a.col + radius); ++c) {
                const double dr = r - a.row, dc = c - a.col;
                const double d2 = dr * dr + dc * dc;
                if (d2 > r2) continue;
                Best& b = best[static_cast<std::size_t>(r) * w + c];
                if (b.d2 < 0.0 || d2 < b.d2 ||
                    (d2 == b.d2 && (a.category < b.category ||
                                    (a.category == b.category && i < b.index)))) {
                    b = Best{d2, a.category, i};
                }
            }
        }
    }
    for (Eigen::Index i = 0; i < mp.det_mask.size(); ++i) {
        if (best[static_cast<std::size_t>(i)].d2 >= 0.0) {
            mp.det_mask.value()[i] = 1.0;
            mp.cls_mask.value()[i] = best[static_cast<std::size_t>(i)].category;
        }
    }
    return mp;
}

bool AugmentDraw::is_identity() const {
    return zoom == 1.0 && angle_deg == 0.0 && shear == 0.0 && !flip_h && !flip_v &&
           channel_shift[0] == 0.0 && channel_shift[1] == 0.0 && channel_shift[2] == 0.0;
}

AugmentDraw sample_augment(Rng& rng) {
    AugmentDraw d;
    if (rng.coin()) d.zoom = rng.uniform(0.9, 1.1);
    if (rng.coin()) d.angle_deg = 90.0 * rng.uniform_int(0, 3) + rng.uniform(-10.0, 10.0);
    if (rng.coin()) d.shear = rng.uniform(-0.1, 0.1);
    d.flip_h = rng.coin();
    d.flip_v = rng.coin();
    if (rng.coin())
        for (auto& s : d.channel_shift) s = rng.uniform(-0.05, 0.05);
    return d;
}

namespace {

struct Affine {
    // source = A * (out - center) + center
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0;
    double cx = 0.0, cy = 0.0;

    // (x = col, y = row)
    void map(double ox, double oy, double& sx, double& sy) const {
        const double dx = ox - cx, dy = oy - cy;
        sx = a * dx + b * dy + cx;
        sy = c * dx + d * dy + cy;
    }
};

// Forward transform F = Flip * Rot * Shear * Scale about the center; the
// sampling matrix is its inverse.
Affine inverse_affine(const AugmentDraw& t, int h, int w) {
    const double rad = t.angle_deg * M_PI / 180.0;
    const double cr = std::cos(rad), sr = std::sin(rad);
    // forward 2x2 in (x, y)
    double f00 = cr, f01 = -sr, f10 = sr, f11 = cr;
    // shear: x += shear * y
    double g00 = f00 + f01 * 0.0, g01 = f00 * t.shear + f01;
    double g10 = f10, g11 = f10 * t.shear + f11;
    // zoom
    g00 *= t.zoom;
    g01 *= t.zoom;
    g10 *= t.zoom;
    g11 *= t.zoom;
    // flips applied last (outermost)
    if (t.flip_h) {
        g00 = -g00;
        g01 = -g01;
    }
    if (t.flip_v) {
        g10 = -g10;
        g11 = -g11;
    }
    const double det = g00 * g11 - g01 * g10;
    Affine inv;
    inv.a = g11 / det;
    inv.b = -g01 / det;
    inv.c = -g10 / det;
    inv.d = g00 / det;
    inv.cx = (w - 1) / 2.0;
    inv.cy = (h - 1) / 2.0;
    return inv;
}

double bilinear_at(const Tensor& img, int ch, double sy, double sx, double fill) {
    const int h = img.dim(1), w = img.dim(2);
    if (sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1) return fill;
    const int x0 = std::min(static_cast<int>(sx), w - 2 >= 0 ? w - 2 : 0);
    const int y0 = std::min(static_cast<int>(sy), h - 2 >= 0 ? h - 2 : 0);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = sx - x0, fy = sy - y0;
    const double v00 = img(ch, y0, x0), v01 = img(ch, y0, x1);
    const double v10 = img(ch, y1, x0), v11 = img(ch, y1, x1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

double nearest_at(const Tensor& mask, double sy, double sx) {
    const int h = mask.dim(0), w = mask.dim(1);
    const int x = static_cast<int>(std::lround(sx));
    const int y = static_cast<int>(std::lround(sy));
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return mask.value()[static_cast<Eigen::Index>(y) * w + x];
}

}  // namespace

void augment_with(const AugmentDraw& draw, const std::array<double, 3>& fill, Tensor& image,
                  MaskPair& masks) {
    if (draw.is_identity()) return;
    const int h = image.dim(1), w = image.dim(2);
    const Eigen::Index m = static_cast<Eigen::Index>(h) * w;

    const bool geometric = draw.zoom != 1.0 || draw.angle_deg != 0.0 || draw.shear != 0.0 ||
                           draw.flip_h || draw.flip_v;
    if (geometric) {
        const Affine inv = inverse_affine(draw, h, w);
        Tensor new_img(image.shape());
        Tensor new_det(masks.det_mask.shape());
        Tensor new_cls(masks.cls_mask.shape());
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                double sx, sy;
                inv.map(c, r, sx, sy);
                const Eigen::Index at = static_cast<Eigen::Index>(r) * w + c;
                for (int ch = 0; ch < 3; ++ch)
                    new_img.value()[ch * m + at] =
                        bilinear_at(image, ch, sy, sx, fill[static_cast<std::size_t>(ch)]);
                // same source pixel for both masks keeps them co-located
                new_det.value()[at] = nearest_at(masks.det_mask, sy, sx);
                new_cls.value()[at] = nearest_at(masks.cls_mask, sy, sx);
            }
        }
        image = new_img;
        masks.det_mask = new_det;
        masks.cls_mask = new_cls;
    }
    for (int ch = 0; ch < 3; ++ch) {
        if (draw.channel_shift[static_cast<std::size_t>(ch)] == 0.0) continue;
        image.value().segment(ch * m, m) =
            (image.value().segment(ch * m, m) + draw.channel_shift[static_cast<std::size_t>(ch)])
                .cwiseMax(0.0)
                .cwiseMin(1.0);
    }
}

void augment(Rng& rng, const std::array<double, 3>& fill, Tensor& image, MaskPair& masks) {
    augment_with(sample_augment(rng), fill, image, masks);
}

std::vector<Patch> crop_patches(const Tensor& image, const MaskPair& masks, int size, int stride) {
    const int h = image.dim(1), w = image.dim(2);
    if (size > h || size > w) throw std::invalid_argument("crop_patches: size exceeds image");
    if (stride < 1) throw std::invalid_argument("crop_patches: stride must be >= 1");
    const Eigen::Index m = static_cast<Eigen::Index>(h) * w;
    const Eigen::Index pm = static_cast<Eigen::Index>(size) * size;

    std::vector<int> r_offsets, c_offsets;
    for (int r = 0; r + size <= h; r += stride) r_offsets.push_back(r);
    if (r_offsets.back() + size < h) r_offsets.push_back(h - size);
    for (int c = 0; c + size <= w; c += stride) c_offsets.push_back(c);
    if (c_offsets.back() + size < w) c_offsets.push_back(w - size);

    std::vector<Patch> patches;
    for (int r0 : r_offsets) {
        for (int c0 : c_offsets) {
            Patch p;
            p.row0 = r0;
            p.col0 = c0;
            p.image = Tensor({3, size, size});
            p.masks.det_mask = Tensor({size, size});
            p.masks.cls_mask = Tensor({size, size});
            for (int r = 0; r < size; ++r) {
                const Eigen::Index src = static_cast<Eigen::Index>(r0 + r) * w + c0;
                const Eigen::Index dst = static_cast<Eigen::Index>(r) * size;
                for (int ch = 0; ch < 3; ++ch)
                    p.image.value().segment(ch * pm + dst, size) =
                        image.value().segment(ch * m + src, size);
                p.masks.det_mask.value().segment(dst, size) =
                    masks.det_mask.value().segment(src, size);
                p.masks.cls_mask.value().segment(dst, size) =
                    masks.cls_mask.value().segment(src, size);
            }
            patches.push_back(std::move(p));
        }
    }
    return patches;
}

void save_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images,
                  const SynthConfig& config, std::uint64_t master_seed) {
    fs::create_directories(dir);
    json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = master_seed;
    manifest["num_categories"] = config.num_categories();
    manifest["mask_radius"] = config.mask_radius;
    json arr = json::array();
    for (const auto& img : images) {
        const std::string file = img.image_id + ".png";
        write_png_rgb8((fs::path(dir) / file).string(), img.pixels);
        json rec;
        rec["id"] = img.image_id;
        rec["file"] = file;
        rec["height"] = img.pixels.dim(1);
        rec["width"] = img.pixels.dim(2);
        json nuclei = json::array();
        for (const auto& a : img.nuclei) nuclei.push_back({a.row, a.col, a.category});
        rec["nuclei"] = nuclei;
        arr.push_back(rec);
    }
    manifest["images"] = arr;
    {
        std::ofstream f(fs::path(dir) / "manifest.json");
        if (!f) throw std::runtime_error("cannot write manifest in " + dir);
        f << manifest.dump(2) << "\n";
    }

    // split by image at the configured ratio
    std::vector<std::string> ids;
    for (const auto& img : images) ids.push_back(img.image_id);
    Rng rng(derive_seed(master_seed, seed_stream::split));
    rng.shuffle(ids);
    const int total_ratio = config.split_ratio[0] + config.split_ratio[1] + config.split_ratio[2];
    const std::size_t n = ids.size();
    const std::size_t n_train = n * static_cast<std::size_t>(config.split_ratio[0]) /
                                static_cast<std::size_t>(total_ratio);
    const std::size_t n_val = n * static_cast<std::size_t>(config.split_ratio[1]) /
                              static_cast<std::size_t>(total_ratio);
    auto write_ids = [&](const std::string& name, std::size_t lo, std::size_t hi) {
        std::ofstream f(fs::path(dir) / name);
        for (std::size_t i = lo; i < hi; ++i) f << ids[i] << "\n";
    };
    write_ids("train.txt", 0, n_train);
    write_ids("val.txt", n_train, n_train + n_val);
    write_ids("test.txt", n_train + n_val, n);
}

namespace {

json read_manifest(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw std::runtime_error("no manifest.json in " + dir);
    json manifest;
    f >> manifest;
    return manifest;
}

}  // namespace

std::vector<AnnotatedImage> load_dataset(const std::string& dir) {
    json manifest = read_manifest(dir);
    std::vector<AnnotatedImage> out;
    for (const auto& rec : manifest.at("images")) {
        AnnotatedImage img;
        img.image_id = rec.at("id").get<std::string>();
        img.pixels = read_png_rgb8((fs::path(dir) / rec.at("file").get<std::string>()).string());
        for (const auto& n : rec.at("nuclei")) {
            Annotation a;
            a.row = n.at(0).get<int>();
            a.col = n.at(1).get<int>();
            a.category = n.at(2).get<int>();
            img.nuclei.push_back(a);
        }
        out.push_back(std::move(img));
    }
    return out;
}

DatasetSplits load_splits(const std::string& dir) {
    auto read_ids = [&](const std::string& name) {
        std::ifstream f(fs::path(dir) / name);
        if (!f) throw std::runtime_error("missing split file " + name + " in " + dir);
        std::vector<std::string> ids;
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) ids.push_back(line);
        return ids;
    };
    DatasetSplits s;
    s.train = read_ids("train.txt");
    s.val = read_ids("val.txt");
    s.test = read_ids("test.txt");
    return s;
}

std::vector<AnnotatedImage> load_split(const std::string& dir, const std::string& split_name) {
    DatasetSplits splits = load_splits(dir);
    const std::vector<std::string>* ids = nullptr;
    if (split_name == "train") ids = &splits.train;
    else if (split_name == "val") ids = &splits.val;
    else if (split_name == "test") ids = &splits.test;
    else throw std::invalid_argument("unknown split: " + split_name);

    std::vector<AnnotatedImage> all = load_dataset(dir);
    std::vector<AnnotatedImage> out;
    for (const auto& id : *ids) {
        auto it = std::find_if(all.begin(), all.end(),
                               [&](const AnnotatedImage& im) { return im.image_id == id; });
        if (it == all.end()) throw std::runtime_error("split references missing image " + id);
        out.push_back(std::move(*it));
    }
    return out;
}

int dataset_num_categories(const std::string& dir) {
    return read_manifest(dir).at("num_categories").get<int>();
}

}  // namespace sfcn
