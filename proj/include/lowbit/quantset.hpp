#pragma once

// Discrete weight alphabets ({-1,+1}, {-1,0,+1}, power-of-two ladders) and the
// alternating projection onto { alpha * q : alpha > 0, q in alphabet^d }.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lowbit/errors.hpp"
#include "lowbit/tensor.hpp"

namespace lowbit {

enum class SetKind { binary, ternary, pow2 };

class QuantizationSet {
public:
    static QuantizationSet binary() { return QuantizationSet(SetKind::binary, 0); }
    static QuantizationSet ternary() { return QuantizationSet(SetKind::ternary, 0); }

    // {0, +/-1, +/-2, ..., +/-2^n}
    static QuantizationSet pow2(int n) {
        if (n < 0 || n > 6)
            throw ConfigError("pow2 shift range must be in [0, 6], got " + std::to_string(n));
        return QuantizationSet(SetKind::pow2, n);
    }

    static QuantizationSet parse(const std::string& s) {
        if (s == "binary") return binary();
        if (s == "ternary") return ternary();
        if (s.rfind("pow2:", 0) == 0) {
            const std::string tail = s.substr(5);
            if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos)
                throw ConfigError("bad quantization set '" + s + "'");
            return pow2(std::stoi(tail));
        }
        throw ConfigError("unknown quantization set '" + s +
                          "' (expected binary, ternary, or pow2:N)");
    }

    SetKind kind() const { return kind_; }
    int shift_bits() const { return shift_bits_; }

    std::string name() const {
        switch (kind_) {
            case SetKind::binary: return "binary";
            case SetKind::ternary: return "ternary";
            default: return "pow2:" + std::to_string(shift_bits_);
        }
    }

    // Levels in ascending order.
    const std::vector<int>& alphabet() const { return levels_; }

    bool contains(int q) const {
        return std::find(levels_.begin(), levels_.end(), q) != levels_.end();
    }

    int bits_per_weight() const {
        const std::size_t n = levels_.size();
        int bits = 1;
        while ((std::size_t{1} << bits) < n) ++bits;
        return bits;
    }

    int index_of(int q) const {
        const auto it = std::find(levels_.begin(), levels_.end(), q);
        if (it == levels_.end())
            throw FormatError("code " + std::to_string(q) + " not in alphabet " + name());
        return static_cast<int>(it - levels_.begin());
    }

    bool operator==(const QuantizationSet& o) const {
        return kind_ == o.kind_ && shift_bits_ == o.shift_bits_;
    }

private:
    QuantizationSet(SetKind kind, int shift_bits) : kind_(kind), shift_bits_(shift_bits) {
        switch (kind_) {
            case SetKind::binary: levels_ = {-1, 1}; break;
            case SetKind::ternary: levels_ = {-1, 0, 1}; break;
            case SetKind::pow2:
                levels_.push_back(0);
                for (int k = 0; k <= shift_bits_; ++k) {
                    levels_.push_back(1 << k);
                    levels_.push_back(-(1 << k));
                }
                std::sort(levels_.begin(), levels_.end());
                break;
        }
    }

    SetKind kind_;
    int shift_bits_;
    std::vector<int> levels_;
};

// Closest level to x. Ties prefer the smaller magnitude, then the positive
// sign, so results do not depend on alphabet ordering.
inline int nearest_level(double x, const std::vector<int>& alphabet) {
    if (alphabet.empty()) throw ConfigError("empty alphabet");
    int best = alphabet.front();
    double best_dist = std::fabs(x - best);
    for (std::size_t i = 1; i < alphabet.size(); ++i) {
        const int a = alphabet[i];
        const double d = std::fabs(x - a);
        if (d < best_dist) {
            best = a;
            best_dist = d;
        } else if (d == best_dist) {
            if (std::abs(a) < std::abs(best) || (std::abs(a) == std::abs(best) && a > best))
                best = a;
        }
    }
    return best;
}

// Least-squares scale for fixed codes: argmin_a ||v - a q||^2 = v.q / q.q.
inline double alpha_update(const Tensor& v, const std::vector<std::int8_t>& codes) {
    if (v.size() != codes.size()) throw ShapeError("alpha_update: length mismatch");
    double vq = 0, qq = 0;
    const double* p = v.data();
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const double q = static_cast<double>(codes[i]);
        vq += p[i] * q;
        qq += q * q;
    }
    if (qq == 0) throw DegenerateCodesError("alpha_update: all codes are zero");
    return vq / qq;
}

struct QuantizedLayer {
    std::vector<int> shape;
    std::vector<std::int8_t> codes;
    double alpha = 1.0;
    QuantizationSet set = QuantizationSet::ternary();

    Tensor realize() const {
        Tensor t(shape);
        double* p = t.data();
        for (std::size_t i = 0; i < codes.size(); ++i)
            p[i] = alpha * static_cast<double>(codes[i]);
        return t;
    }

    double zero_fraction() const {
        if (codes.empty()) return 0.0;
        std::size_t z = 0;
        for (std::int8_t q : codes)
            if (q == 0) ++z;
        return static_cast<double>(z) / static_cast<double>(codes.size());
    }
};

struct ProjectionResult {
    QuantizedLayer layer;
    int iterations = 0;               // full code/alpha cycles until codes stopped moving
    bool converged = false;
    std::vector<double> objective_trace;  // ||v - alpha q||^2 after each half-step
};

namespace detail {

inline double projection_objective(const Tensor& v, const std::vector<std::int8_t>& codes,
                                   double alpha) {
    double s = 0;
    const double* p = v.data();
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const double r = p[i] - alpha * static_cast<double>(codes[i]);
        s += r * r;
    }
    return s;
}

// Median-of-magnitudes seed: alpha0 = mean of the above-median magnitudes.
// Scale-equivariant and robust to the mass of near-zero weights.
inline double initial_alpha(const Tensor& v) {
    std::vector<double> mags(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) mags[i] = std::fabs(v[i]);
    const std::size_t mid = (mags.size() - 1) / 2;
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(mid), mags.end());
    const double median = mags[mid];
    double sum = 0, total = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double m = std::fabs(v[i]);
        total += m;
        if (m > median) {
            sum += m;
            ++count;
        }
    }
    if (count) return sum / static_cast<double>(count);
    return total / static_cast<double>(v.size());
}

// Codes are a piecewise-constant function of the scale; its breakpoints are
// |v_i| / t over the level midpoints t. Below this size we can afford one
// alternation start inside every breakpoint interval, which covers every
// reachable code assignment and removes the usual local-minimum misses.
constexpr std::size_t kExhaustiveSeedLimit = 64;

inline std::vector<double> projection_seeds(const Tensor& v, const QuantizationSet& set,
                                            std::optional<double> init_alpha) {
    if (init_alpha && *init_alpha > 0) return {*init_alpha};  // warm start wins outright

    std::vector<double> mags;
    std::vector<double> thresholds;
    {
        std::vector<int> abs_levels;
        for (int a : set.alphabet()) abs_levels.push_back(std::abs(a));
        std::sort(abs_levels.begin(), abs_levels.end());
        abs_levels.erase(std::unique(abs_levels.begin(), abs_levels.end()), abs_levels.end());
        for (std::size_t i = 0; i + 1 < abs_levels.size(); ++i)
            thresholds.push_back((abs_levels[i] + abs_levels[i + 1]) / 2.0);
    }

    std::vector<double> seeds;
    if (v.size() <= kExhaustiveSeedLimit && !thresholds.empty()) {
        std::vector<double> bps;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double m = std::fabs(v[i]);
            if (m == 0) continue;
            for (double t : thresholds) bps.push_back(m / t);
        }
        std::sort(bps.begin(), bps.end());
        bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
        if (!bps.empty()) {
            seeds.push_back(bps.front() / 2);
            for (std::size_t i = 0; i + 1 < bps.size(); ++i)
                seeds.push_back((bps[i] + bps[i + 1]) / 2);
        }
    }
    if (seeds.empty()) {
        seeds.push_back(initial_alpha(v));
        const double mx = max_abs(v);
        std::vector<double> sorted_mags(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) sorted_mags[i] = std::fabs(v[i]);
        const std::size_t p75 = (sorted_mags.size() * 3) / 4;
        std::nth_element(sorted_mags.begin(),
                         sorted_mags.begin() + static_cast<std::ptrdiff_t>(
                                                   std::min(p75, sorted_mags.size() - 1)),
                         sorted_mags.end());
        const double q75 = sorted_mags[std::min(p75, sorted_mags.size() - 1)];
        for (int a : set.alphabet()) {
            if (a <= 0) continue;
            seeds.push_back(mx / a);
            if (q75 > 0) seeds.push_back(q75 / a);
        }
    }
    return seeds;
}

struct AlternationRun {
    std::vector<std::int8_t> codes;
    double alpha = 0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;
};

inline AlternationRun alternate(const Tensor& v, const QuantizationSet& set, double alpha0,
                                int max_iters) {
    const std::vector<int>& levels = set.alphabet();
    AlternationRun run;
    run.codes.resize(v.size());
    double alpha = alpha0;
    std::vector<std::int8_t> prev;
    for (int it = 1; it <= max_iters; ++it) {
        for (int halvings = 0;; ++halvings) {
            bool any = false;
            for (std::size_t i = 0; i < v.size(); ++i) {
                const int q = nearest_level(v[i] / alpha, levels);
                run.codes[i] = static_cast<std::int8_t>(q);
                any = any || (q != 0);
            }
            if (any) break;
            if (halvings >= 40)
                throw DegenerateCodesError("project_quantize: codes stay zero after 40 halvings");
            alpha /= 2;
        }
        run.objective_trace.push_back(projection_objective(v, run.codes, alpha));

        alpha = alpha_update(v, run.codes);
        if (!(alpha > 0))
            throw DegenerateCodesError("project_quantize: non-positive scale");
        run.objective_trace.push_back(projection_objective(v, run.codes, alpha));

        run.iterations = it;
        if (!prev.empty() && prev == run.codes) {
            run.converged = true;
            break;
        }
        prev = run.codes;
    }
    run.alpha = alpha;
    return run;
}

} // namespace detail

// If v is exactly alpha' * q for some alpha', least-squares alpha can still be
// a rounding step away from alpha'. Recover the exact scale from the largest
// code so feasible inputs project to zero residual bit-for-bit.
inline std::optional<double> exact_alpha(const Tensor& v, const std::vector<std::int8_t>& codes) {
    std::size_t j = codes.size();
    int best = 0;
    for (std::size_t i = 0; i < codes.size(); ++i)
        if (std::abs(codes[i]) > best) {
            best = std::abs(codes[i]);
            j = i;
        }
    if (j == codes.size()) return std::nullopt;
    const double cand = v[j] / static_cast<double>(codes[j]);
    if (!(cand > 0) || !std::isfinite(cand)) return std::nullopt;
    for (std::size_t i = 0; i < codes.size(); ++i)
        if (v[i] != cand * static_cast<double>(codes[i])) return std::nullopt;
    return cand;
}

constexpr double kTinyAlpha = 1e-12;

inline ProjectionResult project_quantize(const Tensor& v, const QuantizationSet& set,
                                         std::optional<double> init_alpha = std::nullopt,
                                         int max_iters = 20) {
    if (v.size() == 0) throw ShapeError("project_quantize: empty tensor");
    const std::vector<int>& levels = set.alphabet();
    const bool has_zero = set.contains(0);

    ProjectionResult res;
    res.layer.shape = v.shape();
    res.layer.set = set;
    res.layer.codes.resize(v.size());

    bool all_zero = true;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] != 0.0) {
            all_zero = false;
            break;
        }
    if (all_zero) {
        if (has_zero) {
            std::fill(res.layer.codes.begin(), res.layer.codes.end(), std::int8_t{0});
            res.layer.alpha = (init_alpha && *init_alpha > 0) ? *init_alpha : 1.0;
        } else {
            std::fill(res.layer.codes.begin(), res.layer.codes.end(), std::int8_t{1});
            res.layer.alpha = kTinyAlpha;
        }
        res.iterations = 1;
        res.converged = true;
        res.objective_trace.push_back(
            detail::projection_objective(v, res.layer.codes, res.layer.alpha));
        return res;
    }

    bool ran_any = false;
    double best_obj = 0;
    for (const double seed : detail::projection_seeds(v, set, init_alpha)) {
        detail::AlternationRun run;
        try {
            run = detail::alternate(v, set, seed, max_iters);
        } catch (const DegenerateCodesError&) {
            continue;  // this seed collapsed; others may not
        }
        const double obj = run.objective_trace.back();
        // winner: lowest objective, then fewest cycles
        if (!ran_any || obj < best_obj ||
            (obj == best_obj && run.iterations < res.iterations)) {
            ran_any = true;
            best_obj = obj;
            res.layer.codes = std::move(run.codes);
            res.layer.alpha = run.alpha;
            res.iterations = run.iterations;
            res.converged = run.converged;
            res.objective_trace = std::move(run.objective_trace);
        }
    }
    if (!ran_any)
        throw DegenerateCodesError("project_quantize: codes stay zero after 40 halvings");

    if (const auto exact = exact_alpha(v, res.layer.codes)) res.layer.alpha = *exact;
    return res;
}

// Batched projection with optional warm-started scales.
inline std::vector<ProjectionResult> project_state(
    const std::vector<Tensor>& vs, const std::vector<QuantizationSet>& sets,
    const std::vector<std::optional<double>>* warm_alphas = nullptr) {
    if (vs.size() != sets.size()) throw ShapeError("project_state: layer count mismatch");
    std::vector<ProjectionResult> out;
    out.reserve(vs.size());
    for (std::size_t i = 0; i < vs.size(); ++i) {
        std::optional<double> warm;
        if (warm_alphas && i < warm_alphas->size()) warm = (*warm_alphas)[i];
        out.push_back(project_quantize(vs[i], sets[i], warm));
    }
    return out;
}

// Symmetric 255-level uniform grid with a data-derived scale; used by the
// int8 layer policy. Codes are plain round-to-nearest of w/s.
struct Int8Layer {
    std::vector<int> shape;
    std::vector<std::int8_t> codes;
    double scale = 1.0;

    Tensor realize() const {
        Tensor t(shape);
        double* p = t.data();
        for (std::size_t i = 0; i < codes.size(); ++i)
            p[i] = scale * static_cast<double>(codes[i]);
        return t;
    }
};

inline Int8Layer int8_quantize(const Tensor& w) {
    Int8Layer out;
    out.shape = w.shape();
    out.codes.resize(w.size());
    const double m = max_abs(w);
    if (m == 0) {
        out.scale = kTinyAlpha;
        std::fill(out.codes.begin(), out.codes.end(), std::int8_t{0});
        return out;
    }
    out.scale = m / 127.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double q = std::round(w[i] / out.scale);
        out.codes[i] = static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
    }
    return out;
}

} // namespace lowbit
