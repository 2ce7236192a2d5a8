#pragma once

// Flow and depth priors.
//
// Flow prior CSV:  kind,t,v,x,y,s,u,xp,yp,conf
// Depth prior CSV: t,v,x,y,z,conf
//
// A flow record says pixel (x, y) of camera v at frame t and pixel (xp, yp) of
// camera u at frame s observe the same scene point. Dense records come from
// within-camera optical flow and always have v == u.

#include "defield/geometry.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace defield {

enum class PriorKind { sparse, dense };

inline const char* to_string(PriorKind k) { return k == PriorKind::sparse ? "sparse" : "dense"; }

struct FlowPriorRecord {
    PriorKind kind = PriorKind::sparse;
    int t = 1;
    int v = 1;
    double x = 0;
    double y = 0;
    int s = 1;
    int u = 1;
    double xp = 0;
    double yp = 0;
    double confidence = 1;

    bool operator==(const FlowPriorRecord&) const = default;
};

struct DepthPriorRecord {
    int t = 1;
    int v = 1;
    double x = 0;
    double y = 0;
    double depth = 1;
    double confidence = 1;

    bool operator==(const DepthPriorRecord&) const = default;
};

/// What records are validated against: camera image sizes and frame count.
struct PriorDomain {
    std::vector<std::pair<int, int>> image_sizes;  // (width, height) per camera, index v-1
    int num_frames = 1;

    static PriorDomain from_rig(const Rig& rig, int num_frames) {
        PriorDomain d;
        for (const auto& c : rig) d.image_sizes.emplace_back(c.width, c.height);
        d.num_frames = num_frames;
        return d;
    }
    int num_cameras() const { return static_cast<int>(image_sizes.size()); }
    bool pixel_ok(int cam, double x, double y) const {
        const auto [w, h] = image_sizes[static_cast<std::size_t>(cam - 1)];
        return x >= -0.5 && y >= -0.5 && x <= w - 0.5 && y <= h - 0.5;
    }
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_field(std::string_view s, T& out) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

// Shortest decimal form that parses back to the same double.
inline std::string fmt_num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

/// Collects per-line diagnostics and throws them together.
class Diagnostics {
public:
    explicit Diagnostics(std::string path) : path_(std::move(path)) {}
    void add(std::size_t line, const std::string& msg) {
        ++count_;
        if (count_ <= 20) text_ << "\n  " << path_ << ":" << line << ": " << msg;
    }
    void throw_if_any() const {
        if (count_ == 0) return;
        std::string msg = std::to_string(count_) + " invalid prior row(s):" + text_.str();
        if (count_ > 20) msg += "\n  ...";
        throw DataError(msg);
    }

private:
    std::string path_;
    std::ostringstream text_;
    std::size_t count_ = 0;
};

}  // namespace detail

inline constexpr std::string_view kFlowPriorHeader = "kind,t,v,x,y,s,u,xp,yp,conf";
inline constexpr std::string_view kDepthPriorHeader = "t,v,x,y,z,conf";

inline std::string format_flow_record(const FlowPriorRecord& r) {
    using detail::fmt_num;
    return std::string(to_string(r.kind)) + ',' + std::to_string(r.t) + ',' + std::to_string(r.v) + ',' + fmt_num(r.x) +
           ',' + fmt_num(r.y) + ',' + std::to_string(r.s) + ',' + std::to_string(r.u) + ',' + fmt_num(r.xp) + ',' +
           fmt_num(r.yp) + ',' + fmt_num(r.confidence);
}

inline std::string format_depth_record(const DepthPriorRecord& r) {
    using detail::fmt_num;
    return std::to_string(r.t) + ',' + std::to_string(r.v) + ',' + fmt_num(r.x) + ',' + fmt_num(r.y) + ',' + fmt_num(r.depth) +
           ',' + fmt_num(r.confidence);
}

inline void write_flow_priors(const std::filesystem::path& path, std::span<const FlowPriorRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << kFlowPriorHeader << '\n';
    for (const auto& r : records) out << format_flow_record(r) << '\n';
    if (!out) throw DataError("short write to " + path.string());
}

inline void write_depth_priors(const std::filesystem::path& path, std::span<const DepthPriorRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << kDepthPriorHeader << '\n';
    for (const auto& r : records) out << format_depth_record(r) << '\n';
    if (!out) throw DataError("short write to " + path.string());
}

/// Parses and validates; all invalid rows are reported together with line numbers.
inline std::vector<FlowPriorRecord> read_flow_priors(const std::filesystem::path& path, const PriorDomain& domain) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open prior file " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::trim_cr(line) != kFlowPriorHeader)
        throw DataError(path.string() + ":1: expected header '" + std::string(kFlowPriorHeader) + "'");
    detail::Diagnostics diag(path.string());
    std::vector<FlowPriorRecord> out;
    for (std::size_t ln = 2; std::getline(in, line); ++ln) {
        if (detail::trim_cr(line).empty()) continue;
        const auto f = detail::split_csv(detail::trim_cr(line));
        if (f.size() != 10) {
            diag.add(ln, "expected 10 fields, got " + std::to_string(f.size()));
            continue;
        }
        FlowPriorRecord r;
        if (f[0] == "sparse") r.kind = PriorKind::sparse;
        else if (f[0] == "dense") r.kind = PriorKind::dense;
        else {
            diag.add(ln, "unknown kind '" + std::string(f[0]) + "'");
            continue;
        }
        if (!detail::parse_field(f[1], r.t) || !detail::parse_field(f[2], r.v) || !detail::parse_field(f[3], r.x) ||
            !detail::parse_field(f[4], r.y) || !detail::parse_field(f[5], r.s) || !detail::parse_field(f[6], r.u) ||
            !detail::parse_field(f[7], r.xp) || !detail::parse_field(f[8], r.yp) ||
            !detail::parse_field(f[9], r.confidence)) {
            diag.add(ln, "malformed number");
            continue;
        }
        if (r.v < 1 || r.v > domain.num_cameras() || r.u < 1 || r.u > domain.num_cameras()) {
            diag.add(ln, "unknown camera (v=" + std::to_string(r.v) + ", u=" + std::to_string(r.u) + ", rig has " +
                             std::to_string(domain.num_cameras()) + ")");
            continue;
        }
        if (r.t < 1 || r.t > domain.num_frames || r.s < 1 || r.s > domain.num_frames) {
            diag.add(ln, "frame index outside [1, " + std::to_string(domain.num_frames) + "]");
            continue;
        }
        if (r.kind == PriorKind::dense && r.v != r.u) {
            diag.add(ln, "dense record must stay within one camera (v != u)");
            continue;
        }
        if (!domain.pixel_ok(r.v, r.x, r.y) || !domain.pixel_ok(r.u, r.xp, r.yp)) {
            diag.add(ln, "pixel outside image");
            continue;
        }
        if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
            diag.add(ln, "confidence outside [0, 1]");
            continue;
        }
        out.push_back(r);
    }
    diag.throw_if_any();
    return out;
}

inline std::vector<DepthPriorRecord> read_depth_priors(const std::filesystem::path& path, const PriorDomain& domain) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open prior file " + path.string());
    std::string line;
    if (!std::getline(in, line) || detail::trim_cr(line) != kDepthPriorHeader)
        throw DataError(path.string() + ":1: expected header '" + std::string(kDepthPriorHeader) + "'");
    detail::Diagnostics diag(path.string());
    std::vector<DepthPriorRecord> out;
    for (std::size_t ln = 2; std::getline(in, line); ++ln) {
        if (detail::trim_cr(line).empty()) continue;
        const auto f = detail::split_csv(detail::trim_cr(line));
        DepthPriorRecord r;
        if (f.size() != 6 || !detail::parse_field(f[0], r.t) || !detail::parse_field(f[1], r.v) ||
            !detail::parse_field(f[2], r.x) || !detail::parse_field(f[3], r.y) ||
            !detail::parse_field(f[4], r.depth) || !detail::parse_field(f[5], r.confidence)) {
            diag.add(ln, "malformed row");
            continue;
        }
        if (r.v < 1 || r.v > domain.num_cameras()) {
            diag.add(ln, "unknown camera " + std::to_string(r.v));
            continue;
        }
        if (r.t < 1 || r.t > domain.num_frames) {
            diag.add(ln, "frame index outside [1, " + std::to_string(domain.num_frames) + "]");
            continue;
        }
        if (!domain.pixel_ok(r.v, r.x, r.y)) {
            diag.add(ln, "pixel outside image");
            continue;
        }
        if (!(r.depth > 0.0) || !std::isfinite(r.depth)) {
            diag.add(ln, "depth must be positive and finite");
            continue;
        }
        out.push_back(r);
    }
    diag.throw_if_any();
    return out;
}

/// Immutable index over flow and depth priors, keyed by (t, v).
class PriorStore {
public:
    PriorStore() = default;
    PriorStore(std::vector<FlowPriorRecord> flow, std::vector<DepthPriorRecord> depth, int num_frames)
        : flow_(std::move(flow)), depth_(std::move(depth)), num_frames_(num_frames) {
        for (std::size_t i = 0; i < flow_.size(); ++i) {
            const auto& r = flow_[i];
            by_pair_[{r.t, r.v, r.s}].push_back(i);
            auto& keys = r.kind == PriorKind::sparse ? sparse_keys_ : dense_keys_;
            keys.insert({r.t, r.v});
        }
        for (std::size_t i = 0; i < depth_.size(); ++i) depth_by_key_[{depth_[i].t, depth_[i].v}].push_back(i);
    }

    static PriorStore load(const std::vector<std::filesystem::path>& flow_files,
                           const std::optional<std::filesystem::path>& depth_file, const PriorDomain& domain) {
        std::vector<FlowPriorRecord> flow;
        for (const auto& f : flow_files) {
            auto r = read_flow_priors(f, domain);
            flow.insert(flow.end(), r.begin(), r.end());
        }
        std::vector<DepthPriorRecord> depth;
        if (depth_file) depth = read_depth_priors(*depth_file, domain);
        return PriorStore(std::move(flow), std::move(depth), domain.num_frames);
    }

    std::size_t size() const { return flow_.size(); }
    bool empty() const { return flow_.empty(); }
    int num_frames() const { return num_frames_; }
    const std::vector<FlowPriorRecord>& flow_records() const { return flow_; }
    const std::vector<DepthPriorRecord>& depth_records() const { return depth_; }

    /// (t, v) keys that have at least one record of `kind`, in sorted order.
    std::vector<std::pair<int, int>> keys(PriorKind kind) const {
        const auto& k = kind == PriorKind::sparse ? sparse_keys_ : dense_keys_;
        return {k.begin(), k.end()};
    }

    std::size_t count(int t, int v, int s, std::optional<PriorKind> kind = std::nullopt) const {
        const auto it = by_pair_.find({t, v, s});
        if (it == by_pair_.end()) return 0;
        std::size_t n = 0;
        for (auto i : it->second) n += !kind || flow_[i].kind == *kind;
        return n;
    }

    std::vector<std::size_t> records(int t, int v, int s, std::optional<PriorKind> kind) const {
        std::vector<std::size_t> out;
        const auto it = by_pair_.find({t, v, s});
        if (it == by_pair_.end()) return out;
        for (auto i : it->second)
            if (!kind || flow_[i].kind == *kind) out.push_back(i);
        return out;
    }

    /// Keeps only records whose cameras are all in `cameras`.
    PriorStore restricted_to(const std::set<int>& cameras) const {
        std::vector<FlowPriorRecord> flow;
        for (const auto& r : flow_)
            if (cameras.count(r.v) && cameras.count(r.u)) flow.push_back(r);
        std::vector<DepthPriorRecord> depth;
        for (const auto& r : depth_)
            if (cameras.count(r.v)) depth.push_back(r);
        return PriorStore(std::move(flow), std::move(depth), num_frames_);
    }

private:
    std::vector<FlowPriorRecord> flow_;
    std::vector<DepthPriorRecord> depth_;
    int num_frames_ = 1;
    std::map<std::tuple<int, int, int>, std::vector<std::size_t>> by_pair_;
    std::set<std::pair<int, int>> sparse_keys_, dense_keys_;
    std::map<std::pair<int, int>, std::vector<std::size_t>> depth_by_key_;
};

struct PairRule {
    int offset = 10;                       // s is drawn from {t - offset, t + offset}
    std::size_t max_pairs = 0;             // 0: all records of the chosen (t, v, s)
    std::optional<PriorKind> kind;         // nullopt: both kinds
};

/// Picks s uniformly among the in-range offsets that carry records, then returns
/// (a random subset of) the matching records. Empty when (t, v) has no priors.
template <typename Rng>
std::vector<FlowPriorRecord> select_pairs(const PriorStore& store, int t, int v, const PairRule& rule, Rng& rng) {
    int candidates[2];
    int n = 0;
    for (int s : {t - rule.offset, t + rule.offset})
        if (s >= 1 && s <= store.num_frames() && store.count(t, v, s, rule.kind) > 0) candidates[n++] = s;
    if (n == 0) return {};
    int s = candidates[0];
    if (n == 2) s = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? candidates[0] : candidates[1];
    auto idx = store.records(t, v, s, rule.kind);
    if (rule.max_pairs > 0 && idx.size() > rule.max_pairs) {
        // Partial Fisher-Yates: the first max_pairs entries become a uniform subset.
        for (std::size_t i = 0; i < rule.max_pairs; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        idx.resize(rule.max_pairs);
    }
    std::vector<FlowPriorRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(store.flow_records()[i]);
    return out;
}

}  // namespace defield
