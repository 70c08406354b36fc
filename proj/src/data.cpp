#include "advshield/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advshield/io.hpp"
#include "advshield/rng.hpp"

#include <json.hpp>

namespace advshield {

std::string DatasetManifest::to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["class_names"] = class_names;
    j["dims"] = {dims.height, dims.width, dims.channels};
    j["split_names"] = split_names;
    j["split_counts"] = split_counts;
    j["pixel_note"] = pixel_note;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataFormatError(std::string("manifest: ") + e.what());
    }
    DatasetManifest m;
    m.name = j.value("name", "");
    m.class_names = j.value("class_names", std::vector<std::string>{});
    auto d = j.value("dims", std::vector<int>{1, 1, 1});
    if (d.size() != 3) throw DataFormatError("manifest: dims must have 3 entries");
    m.dims = {d[0], d[1], d[2]};
    m.split_names = j.value("split_names", std::vector<std::string>{});
    m.split_counts = j.value("split_counts", std::vector<int>{});
    m.pixel_note = j.value("pixel_note", "");
    m.seed = j.value("seed", std::uint64_t{0});
    return m;
}

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synth spec: num_classes must be >= 2");
    if (dims.height < 2 || dims.width < 2 || dims.channels < 1)
        throw ConfigError("synth spec: dims too small");
    if (noise_sigma < 0.0) throw ConfigError("synth spec: noise sigma must be >= 0");
    if (contrast <= 0.0 || contrast > 0.5)
        throw ConfigError("synth spec: contrast must be in (0, 0.5]");
    if (samples_per_class < 1) throw ConfigError("synth spec: samples_per_class must be >= 1");
}

namespace {
constexpr char kTensorMagic[4] = {'A', 'D', 'T', 'N'};
constexpr std::uint16_t kTensorVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
} // namespace

void save_batch(const Batch& batch, const std::string& path) {
    io::Writer w;
    w.magic(kTensorMagic);
    w.u16(kTensorVersion);
    w.u8(kDtypeF32);
    w.u8(4);   // rank: (count, h, w, c)
    w.u64(static_cast<std::uint64_t>(batch.count));
    w.u64(static_cast<std::uint64_t>(batch.dims.height));
    w.u64(static_cast<std::uint64_t>(batch.dims.width));
    w.u64(static_cast<std::uint64_t>(batch.dims.channels));
    w.f32s(batch.x);
    if (batch.y) {
        w.u8(1);
        w.u64(batch.y->size());
        for (int v : *batch.y) w.i32(v);
    } else {
        w.u8(0);
    }
    w.save(path);
}

Batch load_batch(const std::string& path) {
    io::Reader r(path);
    r.expect_magic(kTensorMagic, "tensor container");
    if (r.u16() != kTensorVersion) throw DataFormatError("tensor container: unsupported version in " + path);
    if (r.u8() != kDtypeF32) throw DataFormatError("tensor container: unsupported dtype in " + path);
    if (r.u8() != 4) throw DataFormatError("tensor container: expected rank 4 in " + path);
    Batch b;
    b.count = static_cast<int>(r.u64());
    b.dims.height = static_cast<int>(r.u64());
    b.dims.width = static_cast<int>(r.u64());
    b.dims.channels = static_cast<int>(r.u64());
    if (b.count < 1 || b.dims.size() < 1)
        throw DataFormatError("tensor container: bad dims in " + path);
    r.f32s(b.x, static_cast<std::size_t>(b.count) * b.dims.size());
    if (r.u8() == 1) {
        std::uint64_t n = r.u64();
        if (n != static_cast<std::uint64_t>(b.count))
            throw DataFormatError("tensor container: label count mismatch in " + path);
        std::vector<int> y(n);
        for (auto& v : y) v = r.i32();
        b.y = std::move(y);
    }
    if (!r.at_end()) throw DataFormatError("tensor container: trailing bytes in " + path);
    b.validate();
    return b;
}

Batch preprocess(const Batch& images, int crop, bool scale) {
    if (crop < 1 || crop > images.dims.height || crop > images.dims.width)
        throw InputError("preprocess: crop larger than image");
    const int h = images.dims.height, w = images.dims.width, c = images.dims.channels;
    const int y0 = (h - crop) / 2;
    const int x0 = (w - crop) / 2;
    Batch out;
    out.dims = {crop, crop, c};
    out.count = images.count;
    out.x.reserve(static_cast<std::size_t>(images.count) * out.dims.size());
    for (int s = 0; s < images.count; ++s) {
        const float* src = images.x.data() + static_cast<std::size_t>(s) * images.dims.size();
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    float v = src[((y0 + y) * w + (x0 + x)) * c + ch];
                    out.x.push_back(scale ? v / 255.0f : v);
                }
    }
    out.y = images.y;
    return out;
}

Splits split_balanced(const Batch& pool, int n_train, int n_unlabeled, int n_test,
                      int num_classes, std::uint64_t seed) {
    if (!pool.labeled()) throw ConfigError("split: pool must be labeled");
    if (num_classes < 2) throw ConfigError("split: num_classes must be >= 2");
    if (n_train < 1 || n_unlabeled < 0 || n_test < 1)
        throw ConfigError("split: train and test splits must be non-empty");

    // per-class quota for a split: as even as possible, remainder going to the
    // lowest class ids
    auto quota = [&](int total, int c) { return total / num_classes + (c < total % num_classes ? 1 : 0); };

    std::vector<std::vector<int>> by_class(num_classes);
    for (int i = 0; i < pool.count; ++i) {
        int y = (*pool.y)[i];
        if (y < 0 || y >= num_classes) throw DataFormatError("split: label out of range at index " + std::to_string(i));
        by_class[y].push_back(i);
    }
    for (int c = 0; c < num_classes; ++c) {
        int need = quota(n_train, c) + quota(n_unlabeled, c) + quota(n_test, c);
        if (static_cast<int>(by_class[c].size()) < need)
            throw ConfigError("split: class " + std::to_string(c) + " has only " +
                              std::to_string(by_class[c].size()) + " samples, need " + std::to_string(need));
    }

    Rng rng(seed);
    std::vector<int> train_idx, unl_idx, test_idx;
    for (int c = 0; c < num_classes; ++c) {
        auto idx = by_class[c];
        shuffle_indices(idx, rng);
        const int a = quota(n_train, c);
        const int b = a + quota(n_unlabeled, c);
        const int t = b + quota(n_test, c);
        train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + a);
        unl_idx.insert(unl_idx.end(), idx.begin() + a, idx.begin() + b);
        test_idx.insert(test_idx.end(), idx.begin() + b, idx.begin() + t);
    }

    Splits s;
    s.train = pool.select(train_idx);
    Batch unl = pool.select(unl_idx);
    s.unlabeled_audit = *unl.y;
    unl.y.reset();
    s.unlabeled = std::move(unl);
    s.test = pool.select(test_idx);
    return s;
}

std::vector<float> synth_template(const SynthSpec& spec, int class_id) {
    // Distinct low-frequency patterns; class separability is tuned via the
    // noise level and the template contrast.
    const int h = spec.dims.height, w = spec.dims.width, c = spec.dims.channels;
    std::vector<float> t(static_cast<std::size_t>(h) * w * c);
    const double fx = 1.0 + (class_id % 3);
    const double fy = 1.0 + ((class_id / 3) % 3);
    const double phase = 0.7 * class_id;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double u = static_cast<double>(x) / (w - 1);
            double v = static_cast<double>(y) / (h - 1);
            double val = 0.5 + spec.contrast * std::cos(3.14159265358979 * (fx * u + fy * v) + phase);
            val = std::clamp(val, 0.0, 1.0);
            for (int ch = 0; ch < c; ++ch)
                t[(static_cast<std::size_t>(y) * w + x) * c + ch] = static_cast<float>(val);
        }
    return t;
}

Batch generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Batch pool;
    pool.dims = spec.dims;
    pool.count = spec.num_classes * spec.samples_per_class;
    pool.x.reserve(static_cast<std::size_t>(pool.count) * spec.dims.size());
    std::vector<int> labels;
    labels.reserve(pool.count);
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        std::vector<float> t = synth_template(spec, cls);
        for (int s = 0; s < spec.samples_per_class; ++s) {
            for (float base : t) {
                double v = base + spec.noise_sigma * rng.normal();
                pool.x.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
            labels.push_back(cls);
        }
    }
    pool.y = std::move(labels);
    return pool;
}

Batch import_csv_pixels(const std::string& path, const Shape& dims) {
    std::string text = io::read_text_file(path);
    std::istringstream in(text);
    std::string line;
    Batch b;
    b.dims = dims;
    std::vector<int> labels;
    bool needs_scale = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<float> vals;
        while (std::getline(row, cell, ','))
            vals.push_back(std::stof(cell));
        if (static_cast<int>(vals.size()) != dims.size() + 1)
            throw DataFormatError("csv import: row has " + std::to_string(vals.size()) +
                                  " cells, expected " + std::to_string(dims.size() + 1));
        labels.push_back(static_cast<int>(vals[0]));
        for (std::size_t i = 1; i < vals.size(); ++i) {
            if (vals[i] > 1.0f) needs_scale = true;
            b.x.push_back(vals[i]);
        }
    }
    b.count = static_cast<int>(labels.size());
    if (b.count == 0) throw DataFormatError("csv import: empty file " + path);
    if (needs_scale)
        for (float& v : b.x) v /= 255.0f;
    b.y = std::move(labels);
    b.validate();
    return b;
}

} // namespace advshield
