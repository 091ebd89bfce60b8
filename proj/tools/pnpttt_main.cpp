// pnpttt command-line tool: dataset generation, prior training, PnP
// reconstruction, test-time training, and the full distribution-shift sweep.
// Every run is deterministic given its flags; file-config values are applied
// first and explicit flags override them.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pnpttt/pnpttt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalFlags {
    std::string config_path;
    uint64_t seed = 0;
    std::string out = ".";
    int threads = 1;
    bool seed_given = false;
    bool out_given = false;
    bool threads_given = false;
};

pnpttt::ConfigMap load_config(const GlobalFlags& g) {
    if (g.config_path.empty()) return {};
    return pnpttt::ConfigMap::parse_file(g.config_path);
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

pnpttt::DenoiserConfig denoiser_from_config(const pnpttt::ConfigMap& c) {
    pnpttt::DenoiserConfig d;
    d.depth = static_cast<int>(c.get_int("denoiser.depth", d.depth));
    d.channels = static_cast<int>(c.get_int("denoiser.channels", d.channels));
    d.kernel_size = static_cast<int>(c.get_int("denoiser.kernel_size", d.kernel_size));
    d.residual = c.get_bool("denoiser.residual", d.residual);
    d.lipschitz_target = c.get_double("denoiser.lipschitz_target", d.lipschitz_target);
    d.power_iters = static_cast<int>(c.get_int("denoiser.power_iters", d.power_iters));
    d.sn_ref_size = static_cast<int>(c.get_int("denoiser.sn_ref_size", d.sn_ref_size));
    return d;
}

pnpttt::PnPConfig pnp_from_config(const pnpttt::ConfigMap& c) {
    pnpttt::PnPConfig p;
    p.gamma = c.get_double("pnp.gamma", p.gamma);
    p.max_iter = static_cast<int>(c.get_int("pnp.max_iter", p.max_iter));
    p.tol = c.get_double("pnp.tol", p.tol);
    const std::string acc = c.get_string("pnp.acceleration", "nesterov");
    if (acc == "nesterov") p.acceleration = pnpttt::PnPAccel::nesterov;
    else if (acc == "plain") p.acceleration = pnpttt::PnPAccel::plain;
    else throw std::runtime_error("pnp.acceleration must be nesterov or plain");
    return p;
}

pnpttt::DeqBackwardConfig deq_from_config(const pnpttt::ConfigMap& c) {
    pnpttt::DeqBackwardConfig d;
    d.anderson.depth_m = static_cast<int>(c.get_int("anderson.depth_m", d.anderson.depth_m));
    d.anderson.damping_beta = c.get_double("anderson.damping_beta", d.anderson.damping_beta);
    d.anderson.reg_lambda = c.get_double("anderson.reg_lambda", d.anderson.reg_lambda);
    d.anderson.max_iter = static_cast<int>(c.get_int("anderson.max_iter", d.anderson.max_iter));
    d.anderson.tol = c.get_double("anderson.tol", d.anderson.tol);
    return d;
}

pnpttt::TTTConfig ttt_from_config(const pnpttt::ConfigMap& c) {
    pnpttt::TTTConfig t;
    t.num_iter = static_cast<int>(c.get_int("ttt.num_iter", t.num_iter));
    t.lr = c.get_double("ttt.lr", t.lr);
    t.record_every = static_cast<int>(c.get_int("ttt.record_every", t.record_every));
    t.renormalize = c.get_bool("ttt.renormalize", t.renormalize);
    t.warm_start = c.get_bool("ttt.warm_start", t.warm_start);
    const std::string loss = c.get_string("ttt.loss", "l2sq");
    if (loss == "l2sq") t.loss = pnpttt::LossKind::l2sq;
    else if (loss == "norml1") t.loss = pnpttt::LossKind::norml1;
    else throw std::runtime_error("ttt.loss must be l2sq or norml1");
    return t;
}

std::vector<pnpttt::RealImage> load_test_images(const std::string& data_path, int count, int size,
                                                uint64_t seed) {
    std::vector<pnpttt::RealImage> images;
    if (!data_path.empty()) {
        pnpttt::Dataset ds = pnpttt::load_dataset(data_path);
        images = std::move(ds.images);
        if (count > 0 && static_cast<size_t>(count) < images.size()) images.resize(count);
    } else {
        const int c = count > 0 ? count : 1;
        for (int i = 0; i < c; ++i)
            images.push_back(pnpttt::gen_phantom(size, pnpttt::derive_seed(seed, i)));
    }
    if (images.empty()) throw std::runtime_error("no test images available");
    return images;
}

int cmd_gen_data(const GlobalFlags& g, const std::string& kind, int count, int size,
                 const std::string& out_file) {
    pnpttt::Dataset ds;
    ds.seed = g.seed;
    if (kind == "phantom") ds.kind = pnpttt::DatasetKind::phantom;
    else if (kind == "texture") ds.kind = pnpttt::DatasetKind::texture;
    else throw std::runtime_error("gen-data: --kind must be phantom or texture");
    for (int i = 0; i < count; ++i) {
        const uint64_t s = pnpttt::derive_seed(g.seed, static_cast<uint64_t>(i));
        ds.images.push_back(ds.kind == pnpttt::DatasetKind::phantom ? pnpttt::gen_phantom(size, s)
                                                                    : pnpttt::gen_texture(size, s));
    }
    fs::create_directories(fs::path(out_file).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_file).parent_path());
    pnpttt::save_dataset(out_file, ds);
    json manifest = {{"kind", kind},
                     {"count", count},
                     {"size", size},
                     {"seed", g.seed},
                     {"file", out_file},
                     {"version", pnpttt::kVersion}};
    write_json_file(out_file + ".manifest.json", manifest);
    std::cout << "wrote " << count << " " << kind << " images (" << size << "x" << size << ") to "
              << out_file << "\n";
    return 0;
}

int cmd_train_prior(const GlobalFlags& g, const pnpttt::ConfigMap& cfgfile,
                    const std::string& data_path, const std::string& out_ckpt, int epochs_flag,
                    double lr_flag, int batch_flag, double sigma_flag, int patches_flag) {
    pnpttt::DenoiserConfig dcfg = denoiser_from_config(cfgfile);
    pnpttt::TrainConfig tcfg;
    tcfg.epochs = static_cast<int>(cfgfile.get_int("train.epochs", tcfg.epochs));
    tcfg.batch_size = static_cast<int>(cfgfile.get_int("train.batch_size", tcfg.batch_size));
    tcfg.lr = cfgfile.get_double("train.lr", tcfg.lr);
    tcfg.noise_sigma = cfgfile.get_double("train.noise_sigma", tcfg.noise_sigma);
    tcfg.patch_size = static_cast<int>(cfgfile.get_int("train.patch_size", tcfg.patch_size));
    tcfg.patches_per_image =
        static_cast<int>(cfgfile.get_int("train.patches_per_image", tcfg.patches_per_image));
    const std::string opt = cfgfile.get_string("train.optimizer", "adam");
    if (opt == "adam") tcfg.optimizer = pnpttt::TrainOptimizer::adam;
    else if (opt == "sgd") tcfg.optimizer = pnpttt::TrainOptimizer::sgd;
    else throw std::runtime_error("train.optimizer must be adam or sgd");
    if (epochs_flag >= 0) tcfg.epochs = epochs_flag;
    if (lr_flag > 0) tcfg.lr = lr_flag;
    if (batch_flag > 0) tcfg.batch_size = batch_flag;
    if (sigma_flag >= 0) tcfg.noise_sigma = sigma_flag;
    if (patches_flag > 0) tcfg.patches_per_image = patches_flag;
    tcfg.seed = g.seed;

    pnpttt::Dataset ds = pnpttt::load_dataset(data_path);
    pnpttt::DenoiserParams params = pnpttt::init_params(dcfg, g.seed);
    params = pnpttt::spectral_normalize(params);

    if (tcfg.epochs > 0) {
        auto pairs = pnpttt::make_training_pairs(ds.images, tcfg);
        if (pairs.skipped_images > 0)
            std::cerr << "warning: skipped " << pairs.skipped_images
                      << " images smaller than the patch size\n";
        auto outcome = pnpttt::train_denoiser(params, pairs.pairs, tcfg);
        params = std::move(outcome.params);
        std::cout << "epochs " << outcome.report.epoch_mse.size() << ", final train mse "
                  << (outcome.report.epoch_mse.empty() ? 0.0 : outcome.report.epoch_mse.back())
                  << ", validation psnr " << outcome.report.val_psnr << " dB ("
                  << outcome.report.val_pairs << " held-out patches)\n";
    } else {
        std::cout << "epochs 0: writing initialized (untrained) weights\n";
    }
    fs::create_directories(fs::path(out_ckpt).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_ckpt).parent_path());
    pnpttt::save_checkpoint(out_ckpt, params);
    std::cout << "checkpoint written to " << out_ckpt << "\n";
    return 0;
}

int cmd_reconstruct(const GlobalFlags& g, const pnpttt::ConfigMap& cfgfile,
                    const std::string& ckpt, const std::string& data_path, int count, int size,
                    double ratio, double noise, bool dump_images, const std::string& label) {
    pnpttt::PnPConfig pnp = pnp_from_config(cfgfile);
    pnpttt::DenoiserParams params = pnpttt::load_checkpoint(ckpt);
    auto images = load_test_images(data_path, count, size, pnpttt::derive_seed(g.seed, 0xda7a));
    const int n = images.front().height;
    pnpttt::SamplingMask mask = pnpttt::mask_for_ratio(n, ratio, pnpttt::derive_seed(g.seed, 1));
    const pnpttt::MeasurementOp op{mask, noise};

    fs::create_directories(g.out);
    std::vector<pnpttt::ResultRow> rows;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& gt = images[i];
        const pnpttt::ComplexImage y =
            pnpttt::simulate_measurement(gt, op, pnpttt::derive_seed(g.seed, 0x9000 + i));
        const pnpttt::RealImage x0(gt.height, gt.width);
        auto sol = pnpttt::run_pnp(x0, y, op, params, pnp);
        pnpttt::ResultRow row;
        row.experiment_id = "reconstruct";
        row.prior = label;
        row.cs_ratio = ratio;
        row.image_id = static_cast<int>(i);
        row.ttt_iteration = -1;
        row.loss = pnpttt::loss_selfsup(sol.x_bar, y, op, params, pnp.gamma);
        row.psnr_db = pnpttt::psnr(sol.x_bar, gt);
        row.ssim = pnpttt::ssim(sol.x_bar, gt);
        rows.push_back(row);
        if (dump_images) {
            pnpttt::write_pgm(g.out + "/recon_" + std::to_string(i) + ".pgm", sol.x_bar);
            pnpttt::write_pgm(g.out + "/truth_" + std::to_string(i) + ".pgm", gt);
        }
        std::cout << "image " << i << ": psnr " << row.psnr_db << " dB, ssim " << row.ssim
                  << (sol.converged ? "" : " (pnp hit max_iter)") << "\n";
    }
    pnpttt::write_results_csv(g.out + "/results.csv", rows);
    std::cout << "rows written to " << g.out << "/results.csv\n";
    return 0;
}

int cmd_ttt(const GlobalFlags& g, const pnpttt::ConfigMap& cfgfile, const std::string& ckpt,
            const std::string& data_path, int count, int size, double ratio, double noise,
            int num_iter_flag, double lr_flag, const std::string& save_adapted,
            bool dump_images) {
    pnpttt::PnPConfig pnp = pnp_from_config(cfgfile);
    pnpttt::DeqBackwardConfig deq = deq_from_config(cfgfile);
    pnpttt::TTTConfig ttt = ttt_from_config(cfgfile);
    if (num_iter_flag >= 0) ttt.num_iter = num_iter_flag;
    if (lr_flag >= 0) ttt.lr = lr_flag;

    pnpttt::DenoiserParams params = pnpttt::load_checkpoint(ckpt);
    auto images = load_test_images(data_path, count, size, pnpttt::derive_seed(g.seed, 0xda7a));
    const int n = images.front().height;
    pnpttt::SamplingMask mask = pnpttt::mask_for_ratio(n, ratio, pnpttt::derive_seed(g.seed, 1));
    const pnpttt::MeasurementOp op{mask, noise};

    fs::create_directories(g.out);
    std::vector<pnpttt::ResultRow> rows;
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& gt = images[i];
        const pnpttt::ComplexImage y =
            pnpttt::simulate_measurement(gt, op, pnpttt::derive_seed(g.seed, 0x9000 + i));
        const pnpttt::RealImage x0(gt.height, gt.width);
        pnpttt::TTTResult res = pnpttt::ttt_adapt(x0, y, op, params, pnp, deq, ttt, &gt);
        if (res.failed)
            std::cerr << "image " << i << ": failed (" << res.error << "), partial trace kept\n";
        for (size_t k = 0; k < res.trace.size(); ++k) {
            const auto& tr = res.trace[k];
            pnpttt::ResultRow row;
            row.experiment_id = "ttt";
            row.prior = "pnp_ttt";
            row.cs_ratio = ratio;
            row.image_id = static_cast<int>(i);
            row.ttt_iteration = tr.index;
            row.loss = tr.loss;
            row.psnr_db = tr.psnr_db;
            row.ssim = tr.ssim;
            rows.push_back(row);
        }
        if (!res.trace.empty()) {
            auto [best_idx, best_img] = pnpttt::best_iterate(res.trace, res.iterates);
            pnpttt::ResultRow row;
            row.experiment_id = "ttt";
            row.prior = "pnp_ttt_best";
            row.cs_ratio = ratio;
            row.image_id = static_cast<int>(i);
            row.ttt_iteration = best_idx;
            size_t pos = 0;
            for (size_t k = 0; k < res.trace.size(); ++k)
                if (res.trace[k].index == best_idx) pos = k;
            row.loss = res.trace[pos].loss;
            row.psnr_db = res.trace[pos].psnr_db;
            row.ssim = res.trace[pos].ssim;
            rows.push_back(row);
            std::cout << "image " << i << ": best iter " << best_idx << " psnr " << row.psnr_db
                      << " dB (iter0 " << res.trace.front().psnr_db << " dB)\n";
            if (dump_images)
                pnpttt::write_pgm(g.out + "/ttt_best_" + std::to_string(i) + ".pgm", best_img);
        }
        if (!save_adapted.empty())
            pnpttt::save_checkpoint(save_adapted + (images.size() > 1 ? "." + std::to_string(i) : ""),
                                    res.adapted);
    }
    pnpttt::write_results_csv(g.out + "/results.csv", rows);
    std::cout << "rows written to " << g.out << "/results.csv\n";
    return 0;
}

int cmd_sweep(const GlobalFlags& g, const pnpttt::ConfigMap& cfgfile,
              const std::string& matched_flag, const std::string& mismatched_flag, bool timing) {
    pnpttt::ExperimentConfig cfg;
    cfg.experiment_id = cfgfile.get_string("experiment.id", cfg.experiment_id);
    cfg.image_size = static_cast<int>(cfgfile.get_int("experiment.image_size", cfg.image_size));
    cfg.cs_ratios = cfgfile.get_double_list("experiment.cs_ratios", cfg.cs_ratios);
    cfg.num_test_images =
        static_cast<int>(cfgfile.get_int("experiment.num_test_images", cfg.num_test_images));
    cfg.measurement_noise = cfgfile.get_double("experiment.noise", cfg.measurement_noise);
    cfg.data_seed = static_cast<uint64_t>(cfgfile.get_int("seeds.data", 1));
    cfg.mask_seed = static_cast<uint64_t>(cfgfile.get_int("seeds.mask", 2));
    cfg.init_seed = static_cast<uint64_t>(cfgfile.get_int("seeds.init", 3));
    cfg.denoiser = denoiser_from_config(cfgfile);
    cfg.pnp = pnp_from_config(cfgfile);
    cfg.deq = deq_from_config(cfgfile);
    cfg.ttt = ttt_from_config(cfgfile);
    cfg.matched_checkpoint = cfgfile.get_string("checkpoints.matched", "");
    cfg.mismatched_checkpoint = cfgfile.get_string("checkpoints.mismatched", "");
    cfg.out_dir = cfgfile.get_string("experiment.out_dir", g.out);
    if (g.out_given) cfg.out_dir = g.out;
    if (g.seed_given) {
        cfg.data_seed = pnpttt::derive_seed(g.seed, 1);
        cfg.mask_seed = pnpttt::derive_seed(g.seed, 2);
        cfg.init_seed = pnpttt::derive_seed(g.seed, 3);
    }
    cfg.threads = g.threads_given
                      ? g.threads
                      : static_cast<int>(cfgfile.get_int("experiment.threads", cfg.threads));
    cfg.timing = timing;
    if (!matched_flag.empty()) cfg.matched_checkpoint = matched_flag;
    if (!mismatched_flag.empty()) cfg.mismatched_checkpoint = mismatched_flag;

    std::vector<std::string> missing;
    for (const auto& p : {cfg.matched_checkpoint, cfg.mismatched_checkpoint})
        if (p.empty() || !fs::exists(p)) missing.push_back(p.empty() ? "(unset)" : p);
    if (!missing.empty()) {
        std::string msg = "sweep: missing checkpoints:";
        for (const auto& m : missing) msg += " " + m;
        throw std::runtime_error(msg);
    }

    fs::create_directories(cfg.out_dir);
    pnpttt::SweepOutput out = pnpttt::run_sweep(cfg);
    pnpttt::write_results_csv(cfg.out_dir + "/results.csv", out.rows);
    write_json_file(cfg.out_dir + "/summary.json", out.summary);
    write_json_file(cfg.out_dir + "/manifest.json", out.manifest);

    for (size_t ri = 0; ri < cfg.cs_ratios.size(); ++ri) {
        std::printf("ratio %.2f: natural %.2f dB, matched %.2f dB, pnp-ttt best %.2f dB, delta %+.2f dB\n",
                    cfg.cs_ratios[ri], out.agg.psnr_mean["natural"][ri],
                    out.agg.psnr_mean["matched"][ri], out.agg.psnr_mean["pnp_ttt_best"][ri],
                    out.agg.delta_best_minus_natural[ri]);
    }
    std::cout << "results in " << cfg.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PnP-TTT: plug-and-play reconstruction with test-time-trained priors"};
    app.require_subcommand(1);

    GlobalFlags g;
    app.add_option("--config", g.config_path, "config file (dotted key = value)")
        ->expected(1);
    auto* seed_opt = app.add_option("--seed", g.seed, "base seed");
    auto* out_opt = app.add_option("--out", g.out, "output directory");
    auto* threads_opt = app.add_option("--threads", g.threads, "worker threads");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_kind = "phantom", gen_out = "dataset.bin";
    int gen_count = 10, gen_size = 64;
    gen->add_option("--kind", gen_kind, "phantom | texture");
    gen->add_option("--count", gen_count, "number of images");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--file", gen_out, "output dataset file");

    auto* train = app.add_subcommand("train-prior", "train a denoiser prior");
    std::string train_data, train_out = "prior.ckpt";
    int train_epochs = -1, train_batch = -1, train_patches = -1;
    double train_lr = -1.0, train_sigma = -1.0;
    train->add_option("--data", train_data, "dataset file")->required();
    train->add_option("--ckpt", train_out, "output checkpoint");
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--batch", train_batch, "batch size");
    train->add_option("--lr", train_lr, "learning rate");
    train->add_option("--sigma", train_sigma, "AWGN sigma on [0,1] scale");
    train->add_option("--patches", train_patches, "patches per image");

    auto* rec = app.add_subcommand("reconstruct", "PnP reconstruction from measurements");
    std::string rec_ckpt, rec_data, rec_label = "natural";
    int rec_count = 0, rec_size = 64;
    double rec_ratio = 0.5, rec_noise = 0.0;
    bool rec_dump = false;
    rec->add_option("--ckpt", rec_ckpt, "denoiser checkpoint")->required();
    rec->add_option("--data", rec_data, "dataset of ground-truth images");
    rec->add_option("--count", rec_count, "limit / number of images");
    rec->add_option("--size", rec_size, "image size when generating phantoms");
    rec->add_option("--ratio", rec_ratio, "target sampling ratio in (0,1]");
    rec->add_option("--noise", rec_noise, "measurement noise sigma");
    rec->add_option("--label", rec_label, "prior label for the rows");
    rec->add_flag("--dump-images", rec_dump, "write pgm dumps");

    auto* tttc = app.add_subcommand("ttt", "test-time training on measurements");
    std::string ttt_ckpt, ttt_data, ttt_save;
    int ttt_count = 0, ttt_size = 64, ttt_iters = -1;
    double ttt_ratio = 0.5, ttt_noise = 0.0, ttt_lr = -1.0;
    bool ttt_dump = false;
    tttc->add_option("--ckpt", ttt_ckpt, "denoiser checkpoint (mismatched prior)")->required();
    tttc->add_option("--data", ttt_data, "dataset of ground-truth images");
    tttc->add_option("--count", ttt_count, "limit / number of images");
    tttc->add_option("--size", ttt_size, "image size when generating phantoms");
    tttc->add_option("--ratio", ttt_ratio, "target sampling ratio in (0,1]");
    tttc->add_option("--noise", ttt_noise, "measurement noise sigma");
    tttc->add_option("--num-iter", ttt_iters, "TTT iterations");
    tttc->add_option("--lr", ttt_lr, "TTT learning rate");
    tttc->add_option("--save-adapted", ttt_save, "persist adapted weights to this path");
    tttc->add_flag("--dump-images", ttt_dump, "write pgm dumps");

    auto* sweep = app.add_subcommand("sweep", "full shift experiment over sampling ratios");
    std::string sweep_matched, sweep_mismatched;
    bool sweep_timing = false;
    sweep->add_option("--matched", sweep_matched, "matched-prior checkpoint");
    sweep->add_option("--mismatched", sweep_mismatched, "mismatched-prior checkpoint");
    sweep->add_flag("--timing", sweep_timing, "record wall times (breaks rerun byte-equality)");

    CLI11_PARSE(app, argc, argv);
    g.seed_given = seed_opt->count() > 0;
    g.out_given = out_opt->count() > 0;
    g.threads_given = threads_opt->count() > 0;

    try {
        const pnpttt::ConfigMap cfgfile = load_config(g);
        if (gen->parsed()) return cmd_gen_data(g, gen_kind, gen_count, gen_size, gen_out);
        if (train->parsed())
            return cmd_train_prior(g, cfgfile, train_data, train_out, train_epochs, train_lr,
                                   train_batch, train_sigma, train_patches);
        if (rec->parsed())
            return cmd_reconstruct(g, cfgfile, rec_ckpt, rec_data, rec_count, rec_size, rec_ratio,
                                   rec_noise, rec_dump, rec_label);
        if (tttc->parsed())
            return cmd_ttt(g, cfgfile, ttt_ckpt, ttt_data, ttt_count, ttt_size, ttt_ratio,
                           ttt_noise, ttt_iters, ttt_lr, ttt_save, ttt_dump);
        if (sweep->parsed()) return cmd_sweep(g, cfgfile, sweep_matched, sweep_mismatched,
                                              sweep_timing);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
