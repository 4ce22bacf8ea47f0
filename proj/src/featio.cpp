// SPDX-License-Identifier: Apache-2.0
#include "cmega/featio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "binary_io.hpp"

namespace cmega {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Byte buffers

namespace detail {

void ByteWriter::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorCode::io, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes_.data()),
              static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw FormatError(FormatErrorCode::io, "write failed: " + path.string());
}

ByteReader ByteReader::open(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrorCode::io, "cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return ByteReader(std::move(bytes), path.string());
}

void ByteReader::fail(FormatErrorCode code, const std::string& what) const {
    throw FormatError(code, source_ + ": " + what);
}

void ByteReader::need(std::size_t n) {
    if (remaining() < n)
        fail(FormatErrorCode::truncated, "truncated at byte " + std::to_string(pos_) + " (need " +
                                             std::to_string(n) + ", have " +
                                             std::to_string(remaining()) + ")");
}

std::uint64_t ByteReader::get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
}

void ByteReader::expect_magic(std::string_view m) {
    need(m.size());
    if (!std::equal(m.begin(), m.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_)))
        fail(FormatErrorCode::bad_magic, "bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
}

std::uint32_t ByteReader::expect_version(std::uint32_t supported) {
    const auto v = u32();
    if (v != supported)
        fail(FormatErrorCode::bad_version, "unsupported version " + std::to_string(v));
    return v;
}

double ByteReader::f32() {
    const float v = std::bit_cast<float>(u32());
    if (!std::isfinite(v))
        fail(FormatErrorCode::non_finite, "non-finite value at byte " + std::to_string(pos_ - 4));
    return static_cast<double>(v);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
    need(n);
    std::span<const std::uint8_t> out(bytes_.data() + pos_, n);
    pos_ += n;
    return out;
}

std::string ByteReader::str() {
    const auto n = u32();
    const auto b = bytes(n);
    return std::string(b.begin(), b.end());
}

void ByteReader::expect_end() {
    if (remaining() != 0)
        fail(FormatErrorCode::trailing_bytes, std::to_string(remaining()) + " trailing bytes");
}

}  // namespace detail

using detail::ByteReader;
using detail::ByteWriter;

// ---------------------------------------------------------------------------
// Samples

std::string_view to_string(Label label) {
    return label == Label::normal ? "normal" : "anomalous";
}

Label label_from_string(std::string_view s) {
    if (s == "normal") return Label::normal;
    if (s == "anomalous") return Label::anomalous;
    throw DataError("unknown label \"" + std::string(s) + "\" (expected normal|anomalous)");
}

bool PixelMask::any() const {
    return std::any_of(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
}

Mat PixelMask::as_mat() const {
    Mat m(height, width);
    for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
    return m;
}

void FeatureSample::validate() const {
    const std::string who = sample_id.empty() ? std::string("sample") : "sample " + sample_id;
    for (std::size_t l = 0; l < kStageCount; ++l) {
        const auto& s = stages[l];
        if (s.cells() == 0 || s.dim() == 0)
            throw DataError(who + ": stage " + std::to_string(l + 1) + " is empty");
        if (s.features.rows() != s.cells())
            throw DataError(who + ": stage " + std::to_string(l + 1) +
                            " row count does not match H*W");
        if (!s.features.all_finite())
            throw DataError(who + ": stage " + std::to_string(l + 1) + " has non-finite values");
    }
    if (mask) {
        if (mask->values.size() != mask->height * mask->width)
            throw DataError(who + ": mask payload does not match its dimensions");
        if (std::any_of(mask->values.begin(), mask->values.end(), [](auto v) { return v > 1; }))
            throw DataError(who + ": mask values must be 0 or 1");
        if (label == Label::normal && mask->any())
            throw DataError(who + ": normal sample has anomalous mask pixels");
    }
}

void write_feature_file(const FeatureSample& sample, const fs::path& path) {
    sample.validate();
    ByteWriter w;
    w.magic("CMFG");
    w.u32(1);
    w.u8(static_cast<std::uint8_t>(sample.label));
    w.u8(static_cast<std::uint8_t>(kStageCount));
    for (const auto& s : sample.stages) {
        w.u32(static_cast<std::uint32_t>(s.height));
        w.u32(static_cast<std::uint32_t>(s.width));
        w.u32(static_cast<std::uint32_t>(s.dim()));
    }
    for (const auto& s : sample.stages)
        for (double v : s.features.data()) w.f32(v);
    w.save(path);
}

FeatureSample read_feature_file(const fs::path& path) {
    auto r = ByteReader::open(path);
    r.expect_magic("CMFG");
    r.expect_version(1);
    FeatureSample sample;
    const auto label = r.u8();
    if (label > 1) r.fail(FormatErrorCode::bad_value, "label byte " + std::to_string(label));
    sample.label = static_cast<Label>(label);
    const auto count = r.u8();
    if (count != kStageCount)
        r.fail(FormatErrorCode::bad_stage_count, "stage count " + std::to_string(count) + " != 4");
    std::array<std::size_t, kStageCount> dims{};
    for (std::size_t l = 0; l < kStageCount; ++l) {
        auto& s = sample.stages[l];
        s.height = r.u32();
        s.width = r.u32();
        dims[l] = r.u32();
        if (s.cells() == 0 || dims[l] == 0)
            r.fail(FormatErrorCode::bad_value, "stage " + std::to_string(l + 1) + " has zero extent");
    }
    for (std::size_t l = 0; l < kStageCount; ++l) {
        auto& s = sample.stages[l];
        // Guard the allocation against absurd headers before reading payload.
        if (r.remaining() / 4 / dims[l] < s.cells())
            r.fail(FormatErrorCode::truncated, "payload shorter than stage headers declare");
        s.features = Mat(s.cells(), dims[l]);
        for (auto& v : s.features.data()) v = r.f32();
    }
    r.expect_end();
    return sample;
}

void write_mask_file(const PixelMask& mask, const fs::path& path) {
    if (mask.values.size() != mask.height * mask.width || mask.values.empty())
        throw ContractViolation("write_mask_file: mask dimensions do not match payload");
    ByteWriter w;
    w.magic("CMSK");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(mask.height));
    w.u32(static_cast<std::uint32_t>(mask.width));
    w.bytes(mask.values);
    w.save(path);
}

PixelMask read_mask_file(const fs::path& path) {
    auto r = ByteReader::open(path);
    r.expect_magic("CMSK");
    r.expect_version(1);
    PixelMask m;
    m.height = r.u32();
    m.width = r.u32();
    if (m.height == 0 || m.width == 0) r.fail(FormatErrorCode::bad_value, "zero mask extent");
    if (r.remaining() < m.height * m.width)
        r.fail(FormatErrorCode::truncated, "mask payload shorter than header declares");
    const auto payload = r.bytes(m.height * m.width);
    m.values.assign(payload.begin(), payload.end());
    if (std::any_of(m.values.begin(), m.values.end(), [](auto v) { return v > 1; }))
        r.fail(FormatErrorCode::bad_value, "mask values must be 0 or 1");
    r.expect_end();
    return m;
}

// ---------------------------------------------------------------------------
// Text bank

namespace {

constexpr double kUnitNormTolerance = 1e-6;

bool renormalize(std::vector<double>& v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n == 0.0) throw DataError("text bank vector has zero norm");
    if (std::abs(n - 1.0) <= kUnitNormTolerance) return false;
    for (auto& x : v) x /= n;
    return true;
}

}  // namespace

void write_text_bank(const TextBank& bank, const fs::path& path) {
    if (bank.dim() == 0 || bank.anomaly_vec.size() != bank.dim())
        throw ContractViolation("write_text_bank: vectors must be nonempty and equal length");
    if (bank.prompts.size() > UINT16_MAX)
        throw ContractViolation("write_text_bank: too many prompts");
    ByteWriter w;
    w.magic("CMTX");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(bank.dim()));
    for (double v : bank.normal_vec) w.f32(v);
    for (double v : bank.anomaly_vec) w.f32(v);
    w.u16(static_cast<std::uint16_t>(bank.prompts.size()));
    for (const auto& p : bank.prompts) w.str(p);
    w.save(path);
}

TextBank read_text_bank(const fs::path& path) {
    auto r = ByteReader::open(path);
    r.expect_magic("CMTX");
    r.expect_version(1);
    const auto d = r.u32();
    if (d == 0) r.fail(FormatErrorCode::bad_value, "zero text dimension");
    if (r.remaining() / 8 < d) r.fail(FormatErrorCode::truncated, "text vectors truncated");
    TextBank bank;
    bank.normal_vec.resize(d);
    bank.anomaly_vec.resize(d);
    for (auto& v : bank.normal_vec) v = r.f32();
    for (auto& v : bank.anomaly_vec) v = r.f32();
    const auto count = r.u16();
    bank.prompts.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) bank.prompts.push_back(r.str());
    r.expect_end();
    const bool a = renormalize(bank.normal_vec);
    const bool b = renormalize(bank.anomaly_vec);
    bank.renormalized = a || b;
    return bank;
}

// ---------------------------------------------------------------------------
// Mask pooling

Mat pool_mask_to_grid(const PixelMask& mask, std::size_t grid_h, std::size_t grid_w) {
    detail::require(grid_h > 0 && grid_w > 0, "pool_mask_to_grid: zero grid dimension");
    detail::require(grid_h <= mask.height && grid_w <= mask.width,
                    "pool_mask_to_grid: grid larger than mask");
    const std::size_t cell_h = mask.height / grid_h;
    const std::size_t cell_w = mask.width / grid_w;
    Mat grid(grid_h, grid_w);
    for (std::size_t y = 0; y < mask.height; ++y) {
        const std::size_t gy = std::min(y / cell_h, grid_h - 1);
        for (std::size_t x = 0; x < mask.width; ++x) {
            if (mask.at(y, x) == 0) continue;
            grid(gy, std::min(x / cell_w, grid_w - 1)) = 1.0;
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
    return out;
}

void collect_missing(const json& obj, std::initializer_list<const char*> keys,
                     const std::string& prefix, std::vector<std::string>& missing) {
    for (const char* k : keys)
        if (!obj.contains(k)) missing.push_back(prefix + k);
}

SampleEntry parse_sample(const json& j) {
    SampleEntry e;
    e.sample_id = j.at("sample_id").get<std::string>();
    e.feature_path = j.at("feature_path").get<std::string>();
    if (j.contains("mask_path") && !j.at("mask_path").is_null())
        e.mask_path = fs::path(j.at("mask_path").get<std::string>());
    e.label = label_from_string(j.at("label").get<std::string>());
    return e;
}

json sample_to_json(const SampleEntry& e) {
    json j;
    j["sample_id"] = e.sample_id;
    j["feature_path"] = e.feature_path.generic_string();
    if (e.mask_path) j["mask_path"] = e.mask_path->generic_string();
    j["label"] = std::string(to_string(e.label));
    return j;
}

}  // namespace

SchemaError::SchemaError(std::string context, std::vector<std::string> fields)
    : DataError(context + ": missing required field(s): " + join(fields)),
      fields_(std::move(fields)) {}

const ClassEntry* Manifest::find(std::string_view class_id) const {
    for (const auto& c : classes)
        if (c.class_id == class_id) return &c;
    return nullptr;
}

fs::path Manifest::resolve(const fs::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
}

Manifest parse_manifest(std::string_view json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw DataError("manifest root must be an object");

    std::vector<std::string> missing;
    collect_missing(doc, {"dataset_name", "classes"}, "", missing);
    if (doc.contains("classes") && doc["classes"].is_array()) {
        const auto& classes = doc["classes"];
        for (std::size_t c = 0; c < classes.size(); ++c) {
            const std::string cp = "classes[" + std::to_string(c) + "].";
            collect_missing(classes[c],
                            {"class_id", "train_normals", "train_anomalies", "test_samples"}, cp,
                            missing);
            for (const char* split : {"train_normals", "train_anomalies", "test_samples"}) {
                if (!classes[c].contains(split)) continue;
                const auto& list = classes[c][split];
                for (std::size_t i = 0; i < list.size(); ++i)
                    collect_missing(list[i], {"sample_id", "feature_path", "label"},
                                    cp + split + "[" + std::to_string(i) + "].", missing);
            }
        }
    }
    if (!missing.empty()) throw SchemaError("manifest", std::move(missing));

    Manifest m;
    m.base_dir = base_dir;
    try {
        m.dataset_name = doc.at("dataset_name").get<std::string>();
        if (doc.contains("text_bank") && !doc.at("text_bank").is_null())
            m.text_bank = fs::path(doc.at("text_bank").get<std::string>());
        for (const auto& jc : doc.at("classes")) {
            ClassEntry c;
            c.class_id = jc.at("class_id").get<std::string>();
            for (const auto& s : jc.at("train_normals")) c.train_normals.push_back(parse_sample(s));
            for (const auto& s : jc.at("train_anomalies"))
                c.train_anomalies.push_back(parse_sample(s));
            for (const auto& s : jc.at("test_samples")) c.test_samples.push_back(parse_sample(s));
            m.classes.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest has a field of the wrong type: ") + e.what());
    }

    std::set<std::string> class_ids;
    std::set<std::string> sample_ids;
    for (const auto& c : m.classes) {
        if (!class_ids.insert(c.class_id).second)
            throw DataError("manifest: duplicate class_id \"" + c.class_id + "\"");
        for (const auto* list : {&c.train_normals, &c.train_anomalies, &c.test_samples})
            for (const auto& s : *list)
                if (!sample_ids.insert(s.sample_id).second)
                    throw DataError("manifest: duplicate sample_id \"" + s.sample_id + "\"");
        for (const auto& s : c.train_normals)
            if (s.label != Label::normal)
                throw DataError("manifest: " + s.sample_id + " listed as train normal but labelled anomalous");
        for (const auto& s : c.train_anomalies)
            if (s.label != Label::anomalous)
                throw DataError("manifest: " + s.sample_id + " listed as train anomaly but labelled normal");
    }
    return m;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto m = parse_manifest(text, path.parent_path());

    auto check = [&](const fs::path& p, const std::string& who) {
        if (!fs::exists(m.resolve(p)))
            throw DataError("manifest " + path.string() + ": " + who + " references missing file " +
                            m.resolve(p).string());
    };
    if (m.text_bank) check(*m.text_bank, "text_bank");
    for (const auto& c : m.classes)
        for (const auto* list : {&c.train_normals, &c.train_anomalies, &c.test_samples})
            for (const auto& s : *list) {
                check(s.feature_path, s.sample_id);
                if (s.mask_path) check(*s.mask_path, s.sample_id);
            }
    return m;
}

std::string manifest_to_json(const Manifest& manifest) {
    json doc;
    doc["dataset_name"] = manifest.dataset_name;
    if (manifest.text_bank) doc["text_bank"] = manifest.text_bank->generic_string();
    doc["classes"] = json::array();
    for (const auto& c : manifest.classes) {
        json jc;
        jc["class_id"] = c.class_id;
        for (const auto& [key, list] :
             {std::pair{"train_normals", &c.train_normals},
              std::pair{"train_anomalies", &c.train_anomalies},
              std::pair{"test_samples", &c.test_samples}}) {
            jc[key] = json::array();
            for (const auto& s : *list) jc[key].push_back(sample_to_json(s));
        }
        doc["classes"].push_back(std::move(jc));
    }
    return doc.dump(2) + "\n";
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << manifest_to_json(manifest);
}

FeatureSample load_sample(const Manifest& manifest, const std::string& class_id,
                          const SampleEntry& entry) {
    FeatureSample sample = read_feature_file(manifest.resolve(entry.feature_path));
    sample.sample_id = entry.sample_id;
    sample.class_id = class_id;
    if (sample.label != entry.label)
        throw DataError("sample " + entry.sample_id + ": manifest label " +
                        std::string(to_string(entry.label)) + " disagrees with feature file");
    if (entry.mask_path) sample.mask = read_mask_file(manifest.resolve(*entry.mask_path));
    sample.validate();
    return sample;
}

}  // namespace cmega
