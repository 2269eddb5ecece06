#include "pairlora/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pairlora {

const std::vector<Category>& all_categories() {
    static const std::vector<Category> cats = {Category::face, Category::animal,
                                               Category::landscape};
    return cats;
}

const char* category_name(Category c) {
    switch (c) {
        case Category::face: return "face";
        case Category::animal: return "animal";
        case Category::landscape: return "landscape";
    }
    return "?";
}

Category category_from_string(const std::string& s) {
    for (Category c : all_categories())
        if (s == category_name(c)) return c;
    tensor_fail("unknown category '" + s + "'");
}

int category_token(Category c) { return 10 + int(c); }

// ---------------------------------------------------------------------------
// drawing helpers (channel-first [3,res,res], values in [-1,1])
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s;
    double hp = h * 6.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    return {r + m, g + m, b + m};
}

// [0,1] color to [-1,1]
double to_signed(double v) { return 2.0 * v - 1.0; }

struct Canvas {
    int res;
    std::vector<double> px;  // [3,res,res]

    explicit Canvas(int r) : res(r), px(size_t(3) * r * r, 0.0) {}

    void fill(const Rgb& c) {
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) set(x, y, c, 1.0);
    }

    void vertical_gradient(const Rgb& top, const Rgb& bottom, int y0, int y1) {
        for (int y = std::max(0, y0); y < std::min(res, y1); ++y) {
            double a = (y1 - y0) > 1 ? double(y - y0) / double(y1 - y0 - 1) : 0.0;
            Rgb c = {top.r + a * (bottom.r - top.r), top.g + a * (bottom.g - top.g),
                     top.b + a * (bottom.b - top.b)};
            for (int x = 0; x < res; ++x) set(x, y, c, 1.0);
        }
    }

    // soft-edged filled ellipse
    void ellipse(double cx, double cy, double rx, double ry, const Rgb& c,
                 double edge = 0.8) {
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                double d = std::sqrt(dx * dx + dy * dy);
                double a = smooth(1.0 - (d - 1.0) * std::min(rx, ry) / edge);
                if (a > 0.0) set(x, y, c, a);
            }
    }

    void disk(double cx, double cy, double r, const Rgb& c) { ellipse(cx, cy, r, r, c); }

    // thick soft line segment
    void line(double x0, double y0, double x1, double y1, double w, const Rgb& c) {
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                double px_ = x + 0.5, py_ = y + 0.5;
                double vx = x1 - x0, vy = y1 - y0;
                double len2 = vx * vx + vy * vy;
                double t = len2 > 0 ? ((px_ - x0) * vx + (py_ - y0) * vy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                double dx = px_ - (x0 + t * vx), dy = py_ - (y0 + t * vy);
                double d = std::sqrt(dx * dx + dy * dy);
                double a = smooth(1.0 - (d - w) / 0.8);
                if (a > 0.0) set(x, y, c, a);
            }
    }

    // upward triangle (mountains, ears, trees)
    void triangle(double cx, double base_y, double half_w, double height, const Rgb& c) {
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                double py_ = y + 0.5;
                if (py_ > base_y || py_ < base_y - height) continue;
                double frac = (base_y - py_) / height;  // 0 at base, 1 at tip
                double w = half_w * (1.0 - frac);
                double d = std::abs(x + 0.5 - cx);
                double a = smooth(1.0 - (d - w) / 0.8);
                if (a > 0.0) set(x, y, c, a);
            }
    }

    Tensor to_tensor() const {
        Tensor t = Tensor::zeros({3, res, res});
        auto d = t.data();
        for (size_t i = 0; i < px.size(); ++i)
            d[i] = float(std::clamp(px[i], -1.0, 1.0));
        return t;
    }

private:
    static double smooth(double a) {
        a = std::clamp(a, 0.0, 1.0);
        return a * a * (3.0 - 2.0 * a);
    }

    void set(int x, int y, const Rgb& c, double a) {
        size_t i = size_t(y) * res + x;
        size_t n = size_t(res) * res;
        px[i] = px[i] * (1.0 - a) + to_signed(c.r) * a;
        px[i + n] = px[i + n] * (1.0 - a) + to_signed(c.g) * a;
        px[i + 2 * n] = px[i + 2 * n] * (1.0 - a) + to_signed(c.b) * a;
    }
};

void draw_face(Canvas& cv, Rng& var, Rng& pal) {
    int R = cv.res;
    cv.fill(hsv(pal.uniform(), 0.15 + 0.35 * pal.uniform(), 0.35 + 0.5 * pal.uniform()));

    double cx = R * (0.5 + 0.16 * (var.uniform() - 0.5));
    double cy = R * (0.54 + 0.12 * (var.uniform() - 0.5));
    double rx = R * (0.26 + 0.10 * var.uniform());
    double ry = R * (0.30 + 0.10 * var.uniform());
    Rgb skin = hsv(0.05 + 0.07 * pal.uniform(), 0.25 + 0.35 * pal.uniform(),
                   0.55 + 0.4 * pal.uniform());
    Rgb hair = hsv(0.02 + 0.12 * pal.uniform(), 0.4 + 0.4 * pal.uniform(),
                   0.08 + 0.3 * pal.uniform());
    cv.ellipse(cx, cy, rx, ry, skin);
    // hair cap
    cv.ellipse(cx, cy - ry * 0.72, rx * (0.8 + 0.25 * var.uniform()), ry * 0.45, hair);

    Rgb dark = {0.05, 0.05, 0.08};
    double eye_dx = rx * (0.38 + 0.12 * var.uniform());
    double eye_y = cy - ry * (0.08 + 0.10 * var.uniform());
    double eye_r = R * 0.035 + R * 0.015 * var.uniform();
    cv.disk(cx - eye_dx, eye_y, eye_r, dark);
    cv.disk(cx + eye_dx, eye_y, eye_r, dark);

    Rgb mouth = hsv(0.99, 0.55 + 0.3 * pal.uniform(), 0.45 + 0.25 * pal.uniform());
    double mw = rx * (0.35 + 0.2 * var.uniform());
    double my = cy + ry * (0.42 + 0.12 * var.uniform());
    double bend = R * 0.04 * (var.uniform() - 0.3);
    cv.line(cx - mw, my, cx, my + bend, R * 0.025, mouth);
    cv.line(cx, my + bend, cx + mw, my, R * 0.025, mouth);
}

void draw_animal(Canvas& cv, Rng& var, Rng& pal) {
    int R = cv.res;
    cv.fill(hsv(0.2 + 0.35 * pal.uniform(), 0.15 + 0.3 * pal.uniform(),
                0.45 + 0.4 * pal.uniform()));

    Rgb fur = hsv(0.04 + 0.1 * pal.uniform(), 0.3 + 0.4 * pal.uniform(),
                  0.3 + 0.5 * pal.uniform());
    Rgb fur_light = {std::min(1.0, fur.r + 0.15), std::min(1.0, fur.g + 0.15),
                     std::min(1.0, fur.b + 0.15)};

    double bx = R * (0.5 + 0.12 * (var.uniform() - 0.5));
    double by = R * (0.64 + 0.08 * (var.uniform() - 0.5));
    double brx = R * (0.24 + 0.08 * var.uniform());
    double bry = R * (0.16 + 0.06 * var.uniform());
    // tail
    double tail_dir = var.uniform() < 0.5 ? -1.0 : 1.0;
    cv.line(bx + tail_dir * brx * 0.9, by, bx + tail_dir * (brx * 0.9 + R * 0.16),
            by - R * (0.06 + 0.1 * var.uniform()), R * 0.03, fur);
    // body blob: two overlapping ellipses
    cv.ellipse(bx, by, brx, bry, fur);
    cv.ellipse(bx - tail_dir * brx * 0.35, by - bry * 0.2, brx * 0.75, bry * 0.9, fur);

    double hx = bx - tail_dir * (brx * 0.55 + R * 0.04);
    double hy = by - bry - R * (0.06 + 0.05 * var.uniform());
    double hr = R * (0.11 + 0.04 * var.uniform());
    // ears
    double ear_h = hr * (0.9 + 0.5 * var.uniform());
    cv.triangle(hx - hr * 0.55, hy - hr * 0.6, hr * 0.4, ear_h, fur);
    cv.triangle(hx + hr * 0.55, hy - hr * 0.6, hr * 0.4, ear_h, fur);
    cv.disk(hx, hy, hr, fur_light);

    Rgb dark = {0.05, 0.05, 0.08};
    cv.disk(hx - hr * 0.38, hy - hr * 0.1, R * 0.018, dark);
    cv.disk(hx + hr * 0.38, hy - hr * 0.1, R * 0.018, dark);
    cv.disk(hx, hy + hr * 0.35, R * 0.02, dark);
}

void draw_landscape(Canvas& cv, Rng& var, Rng& pal) {
    int R = cv.res;
    int horizon = int(R * (0.38 + 0.24 * var.uniform()));
    Rgb sky_top = hsv(0.52 + 0.12 * pal.uniform(), 0.3 + 0.35 * pal.uniform(),
                      0.6 + 0.35 * pal.uniform());
    Rgb sky_bot = {std::min(1.0, sky_top.r + 0.25), std::min(1.0, sky_top.g + 0.2),
                   std::min(1.0, sky_top.b + 0.12)};
    Rgb ground_top = hsv(0.22 + 0.14 * pal.uniform(), 0.35 + 0.35 * pal.uniform(),
                         0.3 + 0.4 * pal.uniform());
    Rgb ground_bot = {ground_top.r * 0.55, ground_top.g * 0.55, ground_top.b * 0.55};
    cv.vertical_gradient(sky_top, sky_bot, 0, horizon);
    cv.vertical_gradient(ground_top, ground_bot, horizon, R);

    if (var.uniform() < 0.75) {  // sun / moon
        Rgb sun = hsv(0.09 + 0.06 * pal.uniform(), 0.5 + 0.3 * pal.uniform(), 0.95);
        cv.disk(R * (0.2 + 0.6 * var.uniform()), horizon * (0.25 + 0.45 * var.uniform()),
                R * (0.05 + 0.04 * var.uniform()), sun);
    }
    int n_hills = 1 + var.uniform_int(0, 1);
    for (int i = 0; i < n_hills; ++i) {
        Rgb hill = hsv(0.3 + 0.1 * pal.uniform(), 0.3 + 0.3 * pal.uniform(),
                       0.2 + 0.25 * pal.uniform());
        double hx = R * (0.15 + 0.7 * var.uniform());
        cv.triangle(hx, horizon + 0.5, R * (0.12 + 0.12 * var.uniform()),
                    R * (0.1 + 0.14 * var.uniform()), hill);
    }
    int n_trees = var.uniform_int(1, 3);
    for (int i = 0; i < n_trees; ++i) {
        Rgb leaf = hsv(0.3 + 0.08 * pal.uniform(), 0.5 + 0.3 * pal.uniform(),
                       0.25 + 0.3 * pal.uniform());
        double tx = R * (0.1 + 0.8 * var.uniform());
        double ty = horizon + (R - horizon) * (0.25 + 0.6 * var.uniform());
        double th = R * (0.08 + 0.1 * var.uniform());
        cv.line(tx, ty, tx, ty - th * 0.5, R * 0.012, {0.25, 0.15, 0.1});
        cv.triangle(tx, ty - th * 0.4, th * 0.45, th, leaf);
    }
}

}  // namespace

Tensor gen_content(const ContentSpec& spec) {
    if (spec.res < 8) tensor_fail("gen_content: res too small");
    Canvas cv(spec.res);
    uint64_t mix = splitmix64(spec.variant_seed ^ splitmix64(uint64_t(spec.category) + 1));
    Rng var(mix);
    Rng pal(splitmix64(spec.palette_seed ^ 0xa5a5a5a5a5a5a5a5ULL));
    switch (spec.category) {
        case Category::face: draw_face(cv, var, pal); break;
        case Category::animal: draw_animal(cv, var, pal); break;
        case Category::landscape: draw_landscape(cv, var, pal); break;
    }
    return cv.to_tensor();
}

// ---------------------------------------------------------------------------
// style transforms
// ---------------------------------------------------------------------------

Tensor posterize(const Tensor& img, int n_levels) {
    if (n_levels < 2)
        tensor_fail("posterize: need N >= 2, got " + std::to_string(n_levels));
    Tensor out = Tensor::zeros(img.shape());
    auto src = img.data();
    auto dst = out.data();
    for (size_t i = 0; i < src.size(); ++i) {
        double u = (double(src[i]) + 1.0) * 0.5;  // [0,1]
        int idx = int(std::floor(u * n_levels));
        idx = std::clamp(idx, 0, n_levels - 1);
        dst[i] = float(-1.0 + 2.0 * (idx + 0.5) / n_levels);
    }
    return out;
}

Tensor flatten_background(const Tensor& img, double hue) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        tensor_fail("flatten_background: need [3,H,W], got " + shape_str(img.shape()));
    int H = img.shape()[1], W = img.shape()[2];
    auto src = img.data();
    size_t n = size_t(H) * W;
    auto px = [&](int y, int x, int c) { return double(src[size_t(c) * n + size_t(y) * W + x]); };

    // background references sampled at the image corners
    double ref_top[3], ref_bot[3];
    for (int c = 0; c < 3; ++c) {
        ref_top[c] = 0.5 * (px(0, 0, c) + px(0, W - 1, c));
        ref_bot[c] = 0.5 * (px(H - 1, 0, c) + px(H - 1, W - 1, c));
    }
    Rgb flat = hsv(hue, 0.55, 0.8);
    float fr = float(to_signed(flat.r)), fg = float(to_signed(flat.g)),
          fb = float(to_signed(flat.b));

    const double tau = 0.18;  // rms color distance threshold in [-1,1] units
    Tensor out = img.clone_detached();
    auto dst = out.data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double dt = 0, db = 0;
            for (int c = 0; c < 3; ++c) {
                double v = px(y, x, c);
                dt += (v - ref_top[c]) * (v - ref_top[c]);
                db += (v - ref_bot[c]) * (v - ref_bot[c]);
            }
            if (std::sqrt(dt / 3.0) < tau || std::sqrt(db / 3.0) < tau) {
                dst[size_t(0) * n + size_t(y) * W + x] = fr;
                dst[size_t(1) * n + size_t(y) * W + x] = fg;
                dst[size_t(2) * n + size_t(y) * W + x] = fb;
            }
        }
    return out;
}

Tensor outline_overlay(const Tensor& img, double threshold) {
    if (img.shape().size() != 3 || img.shape()[0] != 3)
        tensor_fail("outline_overlay: need [3,H,W], got " + shape_str(img.shape()));
    int H = img.shape()[1], W = img.shape()[2];
    auto src = img.data();
    size_t n = size_t(H) * W;
    // luminance in [-1,1]
    std::vector<double> lum(n);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = size_t(y) * W + x;
            lum[i] = 0.299 * src[i] + 0.587 * src[n + i] + 0.114 * src[2 * n + i];
        }
    auto at = [&](int y, int x) {
        y = std::clamp(y, 0, H - 1);
        x = std::clamp(x, 0, W - 1);
        return lum[size_t(y) * W + x];
    };
    Tensor out = img.clone_detached();
    auto dst = out.data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
            double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
            double mag = std::sqrt(gx * gx + gy * gy) / 8.0;  // normalized to ~[0,1]
            if (mag > threshold) {
                size_t i = size_t(y) * W + x;
                for (int c = 0; c < 3; ++c) {
                    double v = dst[size_t(c) * n + i];
                    dst[size_t(c) * n + i] = float(v * 0.15 - 0.85);  // pull toward black
                }
            }
        }
    return out;
}

Tensor StyleTransform::apply(const Tensor& img) const {
    switch (kind) {
        case StyleKind::posterize: return posterize(img, int(param));
        case StyleKind::flatten_background: return flatten_background(img, param);
        case StyleKind::outline_overlay: return outline_overlay(img, param);
    }
    tensor_fail("StyleTransform: bad kind");
}

std::string StyleTransform::to_string() const {
    std::ostringstream os;
    switch (kind) {
        case StyleKind::posterize: os << "posterize:" << int(param); break;
        case StyleKind::flatten_background: os << "flatten-background:" << param; break;
        case StyleKind::outline_overlay: os << "outline-overlay:" << param; break;
    }
    return os.str();
}

StyleTransform StyleTransform::from_string(const std::string& s) {
    auto colon = s.find(':');
    std::string name = colon == std::string::npos ? s : s.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
    StyleTransform t;
    if (name == "posterize") {
        t.kind = StyleKind::posterize;
        t.param = arg.empty() ? 8.0 : std::stod(arg);  // N = 8 default
    } else if (name == "flatten-background") {
        t.kind = StyleKind::flatten_background;
        t.param = arg.empty() ? 0.6 : std::stod(arg);
    } else if (name == "outline-overlay") {
        t.kind = StyleKind::outline_overlay;
        t.param = arg.empty() ? 0.35 : std::stod(arg);
    } else {
        tensor_fail("unknown style transform '" + s + "'");
    }
    return t;
}

TrainingPair make_pair(const ContentSpec& spec, const StyleTransform& transform,
                       int style_slot) {
    TrainingPair pair;
    pair.x_content = gen_content(spec);
    pair.x_style = transform.apply(pair.x_content);
    pair.c_content = make_prompt(kPromptLen, {category_token(spec.category), kTokenVStar});
    pair.c_style = append_token(pair.c_content, style_token(style_slot));
    pair.meta.category = spec.category;
    pair.meta.style_kind = transform.to_string();
    pair.meta.style_slot = style_slot;
    pair.meta.variant_seed = spec.variant_seed;
    pair.meta.palette_seed = spec.palette_seed;
    return pair;
}

EvalSet gen_eval_set(const ContentSpec& train_spec, const StyleTransform& transform,
                     int style_slot, int n_same, int n_diff) {
    if (n_same < 1 || n_diff < 1) tensor_fail("gen_eval_set: need n >= 1");
    EvalSet set;
    uint64_t base = splitmix64(train_spec.variant_seed ^ 0x5eedf00dULL);
    for (int i = 0; i < n_same; ++i) {
        ContentSpec spec = train_spec;
        spec.variant_seed = splitmix64(base + uint64_t(i) * 2 + 1);
        spec.palette_seed = splitmix64(base + uint64_t(i) * 2 + 2);
        if (spec.variant_seed == train_spec.variant_seed) spec.variant_seed += 1;
        set.same_category.push_back(make_pair(spec, transform, style_slot));
    }
    std::vector<Category> others;
    for (Category c : all_categories())
        if (c != train_spec.category) others.push_back(c);
    for (int i = 0; i < n_diff; ++i) {
        ContentSpec spec = train_spec;
        spec.category = others[size_t(i) % others.size()];
        spec.variant_seed = splitmix64(base + 0x1000 + uint64_t(i) * 2 + 1);
        spec.palette_seed = splitmix64(base + 0x1000 + uint64_t(i) * 2 + 2);
        set.diff_category.push_back(make_pair(spec, transform, style_slot));
    }
    return set;
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

namespace {

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\t' || c == '\n') out += ' ';
        else out += c;
    }
    return out;
}

std::map<std::string, std::string> parse_kv_line(const std::string& line) {
    std::map<std::string, std::string> kv;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        auto eq = tok.find('=');
        if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

}  // namespace

void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) tensor_fail("manifest: cannot open '" + path + "' for writing");
    f << "# pairlora-manifest v1\n";
    f << "meta res=" << m.res << " seed=" << m.seed << "\n";
    for (const auto& r : m.records) {
        f << "rec section=" << esc(r.section) << " content=" << esc(r.content_path)
          << " style=" << (r.style_path.empty() ? "-" : esc(r.style_path))
          << " category=" << esc(r.category)
          << " style_kind=" << (r.style_kind.empty() ? "-" : esc(r.style_kind))
          << " slot=" << r.style_slot << " variant=" << r.variant_seed
          << " palette=" << r.palette_seed
          << " prompt_c=" << (r.prompt_content.empty() ? "-" : r.prompt_content)
          << " prompt_s=" << (r.prompt_style.empty() ? "-" : r.prompt_style) << "\n";
    }
    if (!f) tensor_fail("manifest: write failed for '" + path + "'");
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) tensor_fail("manifest: cannot open '" + path + "'");
    Manifest m;
    std::string line;
    bool saw_header = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.find("pairlora-manifest") != std::string::npos) saw_header = true;
            continue;
        }
        auto kind_end = line.find(' ');
        std::string kind = line.substr(0, kind_end);
        auto kv = parse_kv_line(line.substr(kind_end == std::string::npos ? line.size()
                                                                          : kind_end));
        auto get = [&](const std::string& k) -> std::string {
            auto it = kv.find(k);
            if (it == kv.end())
                tensor_fail("manifest: line missing key '" + k + "': " + line);
            return it->second == "-" ? "" : it->second;
        };
        if (kind == "meta") {
            m.res = std::stoi(get("res"));
            m.seed = std::stoull(get("seed"));
        } else if (kind == "rec") {
            PairRecord r;
            r.section = get("section");
            r.content_path = get("content");
            r.style_path = get("style");
            r.category = get("category");
            r.style_kind = get("style_kind");
            r.style_slot = std::stoi(get("slot"));
            r.variant_seed = std::stoull(get("variant"));
            r.palette_seed = std::stoull(get("palette"));
            r.prompt_content = get("prompt_c");
            r.prompt_style = get("prompt_s");
            m.records.push_back(std::move(r));
        } else {
            tensor_fail("manifest: unknown record kind '" + kind + "'");
        }
    }
    if (!saw_header) tensor_fail("manifest: missing header in '" + path + "'");
    return m;
}

}  // namespace pairlora
