// The distribution-shift sweep: for each sampling ratio and test image,
// reconstruct with the matched prior, the mismatched ("natural") prior, and
// PnP-TTT starting from the mismatched prior; emit a flat CSV of rows plus a
// table-shaped JSON summary with the per-ratio delta and per-iteration means.
#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pnpttt/deq.hpp"
#include "pnpttt/fixed_point.hpp"
#include "pnpttt/forward_model.hpp"
#include "pnpttt/io.hpp"
#include "pnpttt/metrics.hpp"
#include "pnpttt/rng.hpp"
#include "pnpttt/synth.hpp"
#include "pnpttt/ttt.hpp"
#include "pnpttt/version.hpp"

namespace pnpttt {

struct ResultRow {
    std::string experiment_id;
    std::string prior;  // natural | matched | pnp_ttt | pnp_ttt_best
    double cs_ratio = 0.0;
    int image_id = 0;
    int ttt_iteration = -1;  // -1 for non-TTT rows
    double loss = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double wall_time_s = 0.0;
};

inline constexpr const char* kResultHeader =
    "experiment_id,prior,cs_ratio,image_id,ttt_iteration,loss,psnr_db,ssim,wall_time_s";

namespace detail {

inline std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace detail

inline std::string row_to_csv(const ResultRow& r) {
    std::string out = csv_field(r.experiment_id);
    out += ',';
    out += csv_field(r.prior);
    out += ',';
    out += detail::fmt("%.6g", r.cs_ratio);
    out += ',';
    out += std::to_string(r.image_id);
    out += ',';
    out += std::to_string(r.ttt_iteration);
    out += ',';
    out += detail::fmt("%.9e", r.loss);
    out += ',';
    out += detail::fmt("%.6f", r.psnr_db);
    out += ',';
    out += detail::fmt("%.6f", r.ssim);
    out += ',';
    out += detail::fmt("%.3f", r.wall_time_s);
    return out;
}

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);  // binary: fixed newlines
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << kResultHeader << "\n";
    for (const auto& r : rows) f << row_to_csv(r) << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
}

struct ExperimentConfig {
    std::string experiment_id = "shift";
    int image_size = 64;
    std::vector<double> cs_ratios = {0.1, 0.2, 0.3, 0.4, 0.5};
    int num_test_images = 10;
    uint64_t data_seed = 1;
    uint64_t mask_seed = 2;
    uint64_t init_seed = 3;  // reserved for x0 choices other than zero
    double measurement_noise = 0.0;
    DenoiserConfig denoiser;
    PnPConfig pnp;
    DeqBackwardConfig deq;
    TTTConfig ttt;
    std::string matched_checkpoint;
    std::string mismatched_checkpoint;
    std::string out_dir = ".";
    int threads = 1;
    bool timing = false;  // wall_time_s stays 0 when off so reruns byte-match
};

inline void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.image_size < 32) throw std::invalid_argument("experiment: image_size must be >= 32");
    if (cfg.num_test_images < 1)
        throw std::invalid_argument("experiment: num_test_images must be >= 1");
    if (cfg.cs_ratios.empty()) throw std::invalid_argument("experiment: cs_ratios empty");
    for (double r : cfg.cs_ratios)
        if (!(r > 0.0) || r > 1.0)
            throw std::invalid_argument("experiment: cs_ratios must lie in (0,1]");
    if (cfg.threads < 1) throw std::invalid_argument("experiment: threads must be >= 1");
}

struct SweepAggregates {
    // prior -> ratio index -> mean over images
    std::map<std::string, std::vector<double>> psnr_mean;
    std::map<std::string, std::vector<double>> ssim_mean;
    std::vector<double> delta_best_minus_natural;           // per ratio
    std::vector<std::vector<double>> per_iter_psnr_mean;    // [ratio][recorded iter]
    std::vector<std::vector<int>> per_iter_index;           // [ratio][recorded iter]
};

struct SweepOutput {
    std::vector<ResultRow> rows;
    SweepAggregates agg;
    nlohmann::json summary;
    nlohmann::json manifest;
};

namespace detail {

struct SweepItem {
    int ratio_idx;
    int image_idx;
};

struct ItemOutput {
    std::vector<ResultRow> rows;
    double natural_psnr = 0.0, natural_ssim = 0.0;
    double matched_psnr = 0.0, matched_ssim = 0.0;
    double best_psnr = 0.0, best_ssim = 0.0;
    double final_psnr = 0.0, final_ssim = 0.0;
    std::vector<double> iter_psnr;  // recorded TTT trace PSNR
    std::vector<int> iter_index;
    bool failed = false;
};

inline double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace detail

// Runs the full sweep. Checkpoints are loaded once; every (ratio, image) work
// item owns private parameter copies, so items can run on a small thread pool
// without coordination. Row order and all emitted bytes are independent of
// the thread count.
inline SweepOutput run_sweep(const ExperimentConfig& cfg) {
    validate_experiment_config(cfg);
    const DenoiserParams matched = load_checkpoint(cfg.matched_checkpoint);
    const DenoiserParams natural = load_checkpoint(cfg.mismatched_checkpoint);
    const int n = cfg.image_size;

    // one mask per ratio, shared across images
    std::vector<SamplingMask> masks;
    for (size_t ri = 0; ri < cfg.cs_ratios.size(); ++ri)
        masks.push_back(mask_for_ratio(n, cfg.cs_ratios[ri], derive_seed(cfg.mask_seed, ri)));

    std::vector<RealImage> truths;
    for (int i = 0; i < cfg.num_test_images; ++i)
        truths.push_back(gen_phantom(n, derive_seed(cfg.data_seed, static_cast<uint64_t>(i))));

    std::vector<detail::SweepItem> items;
    for (int ri = 0; ri < static_cast<int>(cfg.cs_ratios.size()); ++ri)
        for (int ii = 0; ii < cfg.num_test_images; ++ii) items.push_back({ri, ii});
    std::vector<detail::ItemOutput> outputs(items.size());

    auto run_item = [&](size_t idx) {
        const auto [ri, ii] = items[idx];
        detail::ItemOutput& out = outputs[idx];
        const double ratio = cfg.cs_ratios[static_cast<size_t>(ri)];
        const RealImage& gt = truths[static_cast<size_t>(ii)];
        const MeasurementOp op{masks[static_cast<size_t>(ri)], cfg.measurement_noise};
        const ComplexImage y = simulate_measurement(
            gt, op, derive_seed(cfg.data_seed, 0x90000u + static_cast<uint64_t>(ri) * 1000 + ii));
        const RealImage x0(n, n);  // zero init

        auto emit = [&](const std::string& prior, int iter, double loss, const RealImage& rec,
                        double wall) {
            ResultRow row;
            row.experiment_id = cfg.experiment_id;
            row.prior = prior;
            row.cs_ratio = ratio;
            row.image_id = ii;
            row.ttt_iteration = iter;
            row.loss = loss;
            row.psnr_db = psnr(rec, gt);
            row.ssim = ssim(rec, gt);
            row.wall_time_s = cfg.timing ? wall : 0.0;
            out.rows.push_back(row);
            return std::make_pair(row.psnr_db, row.ssim);
        };

        // mismatched ("natural") and matched baselines
        {
            const double t0 = detail::now_s();
            auto sol = run_pnp(x0, y, op, natural, cfg.pnp);
            const double loss = loss_selfsup(sol.x_bar, y, op, natural, cfg.pnp.gamma,
                                             cfg.ttt.loss);
            std::tie(out.natural_psnr, out.natural_ssim) =
                emit("natural", -1, loss, sol.x_bar, detail::now_s() - t0);
        }
        {
            const double t0 = detail::now_s();
            auto sol = run_pnp(x0, y, op, matched, cfg.pnp);
            const double loss = loss_selfsup(sol.x_bar, y, op, matched, cfg.pnp.gamma,
                                             cfg.ttt.loss);
            std::tie(out.matched_psnr, out.matched_ssim) =
                emit("matched", -1, loss, sol.x_bar, detail::now_s() - t0);
        }
        // PnP-TTT from the mismatched prior
        {
            const double t0 = detail::now_s();
            TTTResult ttt = ttt_adapt(x0, y, op, natural, cfg.pnp, cfg.deq, cfg.ttt, &gt);
            const double wall = detail::now_s() - t0;
            out.failed = ttt.failed;
            for (size_t k = 0; k < ttt.trace.size(); ++k) {
                const auto& tr = ttt.trace[k];
                emit("pnp_ttt", tr.index, tr.loss, ttt.iterates[k], wall);
                out.iter_psnr.push_back(tr.psnr_db);
                out.iter_index.push_back(tr.index);
            }
            if (!ttt.trace.empty()) {
                auto [best_idx, best_img] = best_iterate(ttt.trace, ttt.iterates);
                size_t pos = 0;
                for (size_t k = 0; k < ttt.trace.size(); ++k)
                    if (ttt.trace[k].index == best_idx) pos = k;
                std::tie(out.best_psnr, out.best_ssim) = emit(
                    "pnp_ttt_best", best_idx, ttt.trace[pos].loss, best_img, wall);
                out.final_psnr = ttt.trace.back().psnr_db;
                out.final_ssim = ttt.trace.back().ssim;
            }
        }
    };

    if (cfg.threads == 1) {
        for (size_t i = 0; i < items.size(); ++i) run_item(i);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= items.size()) return;
                run_item(i);
            }
        };
        std::vector<std::thread> pool;
        const int nt = std::min<int>(cfg.threads, static_cast<int>(items.size()));
        pool.reserve(static_cast<size_t>(nt));
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    SweepOutput out;
    for (const auto& io : outputs)
        out.rows.insert(out.rows.end(), io.rows.begin(), io.rows.end());
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const ResultRow& a, const ResultRow& b) {
                         if (a.cs_ratio != b.cs_ratio) return a.cs_ratio < b.cs_ratio;
                         if (a.image_id != b.image_id) return a.image_id < b.image_id;
                         return a.ttt_iteration < b.ttt_iteration;
                     });

    // aggregates
    const size_t nr = cfg.cs_ratios.size();
    const auto mean_of = [&](auto getter, int ri) {
        double s = 0.0;
        int c = 0;
        for (size_t i = 0; i < items.size(); ++i)
            if (items[i].ratio_idx == ri) {
                s += getter(outputs[i]);
                ++c;
            }
        return s / std::max(1, c);
    };
    for (const char* prior : {"natural", "matched", "pnp_ttt_best", "pnp_ttt_final"}) {
        out.agg.psnr_mean[prior].resize(nr);
        out.agg.ssim_mean[prior].resize(nr);
    }
    out.agg.delta_best_minus_natural.resize(nr);
    out.agg.per_iter_psnr_mean.resize(nr);
    out.agg.per_iter_index.resize(nr);
    for (int ri = 0; ri < static_cast<int>(nr); ++ri) {
        out.agg.psnr_mean["natural"][ri] = mean_of([](const auto& o) { return o.natural_psnr; }, ri);
        out.agg.ssim_mean["natural"][ri] = mean_of([](const auto& o) { return o.natural_ssim; }, ri);
        out.agg.psnr_mean["matched"][ri] = mean_of([](const auto& o) { return o.matched_psnr; }, ri);
        out.agg.ssim_mean["matched"][ri] = mean_of([](const auto& o) { return o.matched_ssim; }, ri);
        out.agg.psnr_mean["pnp_ttt_best"][ri] = mean_of([](const auto& o) { return o.best_psnr; }, ri);
        out.agg.ssim_mean["pnp_ttt_best"][ri] = mean_of([](const auto& o) { return o.best_ssim; }, ri);
        out.agg.psnr_mean["pnp_ttt_final"][ri] =
            mean_of([](const auto& o) { return o.final_psnr; }, ri);
        out.agg.ssim_mean["pnp_ttt_final"][ri] =
            mean_of([](const auto& o) { return o.final_ssim; }, ri);
        out.agg.delta_best_minus_natural[ri] =
            out.agg.psnr_mean["pnp_ttt_best"][ri] - out.agg.psnr_mean["natural"][ri];
        // per-iteration mean PSNR across images (traces share recording grid)
        const detail::ItemOutput* first = nullptr;
        for (size_t i = 0; i < items.size(); ++i)
            if (items[i].ratio_idx == ri) {
                first = &outputs[i];
                break;
            }
        if (first && !first->iter_index.empty()) {
            out.agg.per_iter_index[ri] = first->iter_index;
            out.agg.per_iter_psnr_mean[ri].assign(first->iter_index.size(), 0.0);
            int count = 0;
            for (size_t i = 0; i < items.size(); ++i)
                if (items[i].ratio_idx == ri) {
                    ++count;
                    for (size_t k = 0; k < outputs[i].iter_psnr.size() &&
                                       k < out.agg.per_iter_psnr_mean[ri].size();
                         ++k)
                        out.agg.per_iter_psnr_mean[ri][k] += outputs[i].iter_psnr[k];
                }
            for (double& v : out.agg.per_iter_psnr_mean[ri]) v /= std::max(1, count);
        }
    }

    // summary.json (keys sorted by nlohmann's std::map => stable output)
    nlohmann::json summary;
    summary["experiment_id"] = cfg.experiment_id;
    summary["image_size"] = cfg.image_size;
    summary["num_test_images"] = cfg.num_test_images;
    summary["cs_ratios"] = cfg.cs_ratios;
    auto ratio_key = [&](size_t ri) { return detail::fmt("%.6g", cfg.cs_ratios[ri]); };
    for (const auto& [prior, means] : out.agg.psnr_mean)
        for (size_t ri = 0; ri < nr; ++ri) {
            summary["priors"][prior][ratio_key(ri)]["psnr_mean"] = means[ri];
            summary["priors"][prior][ratio_key(ri)]["ssim_mean"] = out.agg.ssim_mean[prior][ri];
        }
    for (size_t ri = 0; ri < nr; ++ri) {
        summary["delta_pnp_ttt_minus_natural"][ratio_key(ri)] =
            out.agg.delta_best_minus_natural[ri];
        summary["per_iteration_psnr_mean"][ratio_key(ri)] = out.agg.per_iter_psnr_mean[ri];
    }
    out.summary = std::move(summary);

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["experiment_id"] = cfg.experiment_id;
    manifest["image_size"] = cfg.image_size;
    manifest["num_test_images"] = cfg.num_test_images;
    manifest["cs_ratios"] = cfg.cs_ratios;
    manifest["seeds"] = {{"data", cfg.data_seed}, {"mask", cfg.mask_seed}, {"init", cfg.init_seed}};
    manifest["measurement_noise"] = cfg.measurement_noise;
    manifest["denoiser"] = {{"depth", cfg.denoiser.depth},
                            {"channels", cfg.denoiser.channels},
                            {"kernel_size", cfg.denoiser.kernel_size},
                            {"residual", cfg.denoiser.residual},
                            {"lipschitz_target", cfg.denoiser.lipschitz_target},
                            {"power_iters", cfg.denoiser.power_iters},
                            {"sn_ref_size", cfg.denoiser.sn_ref_size}};
    manifest["pnp"] = {{"gamma", cfg.pnp.gamma},
                       {"max_iter", cfg.pnp.max_iter},
                       {"tol", cfg.pnp.tol},
                       {"acceleration",
                        cfg.pnp.acceleration == PnPAccel::nesterov ? "nesterov" : "plain"}};
    manifest["anderson"] = {{"depth_m", cfg.deq.anderson.depth_m},
                            {"damping_beta", cfg.deq.anderson.damping_beta},
                            {"reg_lambda", cfg.deq.anderson.reg_lambda},
                            {"max_iter", cfg.deq.anderson.max_iter},
                            {"tol", cfg.deq.anderson.tol}};
    manifest["ttt"] = {{"num_iter", cfg.ttt.num_iter},
                       {"lr", cfg.ttt.lr},
                       {"loss", cfg.ttt.loss == LossKind::l2sq ? "l2sq" : "norml1"},
                       {"record_every", cfg.ttt.record_every},
                       {"renormalize", cfg.ttt.renormalize},
                       {"warm_start", cfg.ttt.warm_start}};
    manifest["checkpoints"] = {{"matched", cfg.matched_checkpoint},
                               {"mismatched", cfg.mismatched_checkpoint}};
    out.manifest = std::move(manifest);
    return out;
}

}  // namespace pnpttt
