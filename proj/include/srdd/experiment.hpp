#pragma once

// Experiment driver: dataset -> codebook -> training -> sampling -> metrics,
// with every artifact written as plain files (checkpoint, TSV tables, JSON
// summary, PPM samples). Reports are pure functions of (config, seed).

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srdd/checkpoint.hpp"
#include "srdd/config.hpp"
#include "srdd/dataset.hpp"
#include "srdd/diffusion.hpp"
#include "srdd/distill.hpp"
#include "srdd/image_io.hpp"
#include "srdd/metrics.hpp"
#include "srdd/model.hpp"
#include "srdd/sampler.hpp"
#include "srdd/tokenizer.hpp"

namespace srdd {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return StreamRng::mix64(base ^ StreamRng::mix64(salt));
}

struct ExperimentConfig {
    // data
    std::string data_source = "toy";  // toy | folder
    int classes = 4;
    int per_class = 16;
    std::string folder;
    std::string index;
    // model
    ModelConfig model;
    MaskKind mask = MaskKind::markovian;
    // optim
    AdamWConfig optim;
    // train
    int steps = 2000;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int log_every = 100;
    // sample
    SamplerConfig sampler;
    int num_samples = 8;
    // eval
    int eval_samples = 16;
    int feat_side = 4;
    std::vector<double> cfg_sweep = {0.0, 1.0, 3.5, 5.0, 7.5};
    std::vector<double> mr_sweep = {1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1};
};

inline const std::set<std::string>& experiment_known_keys() {
    static const std::set<std::string> keys = {
        "data.source", "data.classes", "data.per_class", "data.folder", "data.index",
        "model.depth", "model.heads", "model.dim", "model.vocab_size", "model.feature_dim",
        "model.schedule", "model.class_dropout_prob", "model.mask",
        "optim.lr", "optim.beta1", "optim.beta2", "optim.eps", "optim.weight_decay",
        "optim.clip_norm",
        "train.steps", "train.batch_size", "train.seed", "train.log_every",
        "sample.cfg_weight", "sample.temperature", "sample.top_k", "sample.mr_threshold",
        "sample.mr_steps", "sample.sr_steps", "sample.num_samples",
        "eval.samples", "eval.feat_side", "eval.cfg_sweep", "eval.mr_sweep",
    };
    return keys;
}

// Validates every key, applies defaults and cross-field checks. The
// environment variable SRDD_SEED (when set) overrides train.seed.
inline ExperimentConfig parse_experiment_config(const Config& cfg) {
    cfg.require_known_keys(experiment_known_keys());
    ExperimentConfig e;
    std::vector<std::string> errors;

    e.data_source = cfg.get_str("data.source", "toy");
    if (e.data_source != "toy" && e.data_source != "folder")
        errors.push_back("data.source must be 'toy' or 'folder'");
    e.classes = cfg.get_int("data.classes", 4);
    if (e.classes < 1) errors.push_back("data.classes must be >= 1");
    e.per_class = cfg.get_int("data.per_class", 16);
    if (e.per_class < 1) errors.push_back("data.per_class must be >= 1");
    e.folder = cfg.get_str("data.folder", "");
    e.index = cfg.get_str("data.index", "");
    if (e.data_source == "folder" && (e.folder.empty() || e.index.empty()))
        errors.push_back("data.folder and data.index are required when data.source=folder");

    e.model.depth = cfg.get_int("model.depth", 4);
    e.model.heads = cfg.get_int("model.heads", 4);
    e.model.dim = cfg.get_int("model.dim", 64);
    e.model.vocab_size = cfg.get_int("model.vocab_size", 64);
    e.model.feature_dim = cfg.get_int("model.feature_dim", 8);
    e.model.num_classes = e.classes;
    e.model.class_dropout_prob =
        static_cast<float>(cfg.get_double("model.class_dropout_prob", 0.1));
    try {
        e.model.schedule = ScaleSchedule(cfg.get_ints("model.schedule", {1, 2, 3, 4}));
    } catch (const ConfigError& err) {
        errors.push_back(err.what());
    }
    try {
        e.mask = mask_kind_from_name(cfg.get_str("model.mask", "markovian"));
    } catch (const ConfigError& err) {
        errors.push_back(err.what());
    }

    e.optim.lr = static_cast<float>(cfg.get_double("optim.lr", 1e-4));
    e.optim.beta1 = static_cast<float>(cfg.get_double("optim.beta1", 0.9));
    e.optim.beta2 = static_cast<float>(cfg.get_double("optim.beta2", 0.95));
    e.optim.eps = static_cast<float>(cfg.get_double("optim.eps", 1e-8));
    e.optim.weight_decay = static_cast<float>(cfg.get_double("optim.weight_decay", 0.05));
    e.optim.clip_norm = static_cast<float>(cfg.get_double("optim.clip_norm", 1.0));

    e.steps = cfg.get_int("train.steps", 2000);
    if (e.steps < 0) errors.push_back("train.steps must be >= 0");
    e.batch_size = cfg.get_int("train.batch_size", 8);
    if (e.batch_size < 1) errors.push_back("train.batch_size must be >= 1");
    e.seed = cfg.get_u64("train.seed", 0);
    if (const char* env = std::getenv("SRDD_SEED")) e.seed = std::stoull(env);
    e.log_every = cfg.get_int("train.log_every", 100);
    if (e.log_every < 1) errors.push_back("train.log_every must be >= 1");

    e.sampler.cfg_weight = static_cast<float>(cfg.get_double("sample.cfg_weight", 0.0));
    e.sampler.temperature = static_cast<float>(cfg.get_double("sample.temperature", 1.0));
    e.sampler.top_k = cfg.get_int("sample.top_k", 0);
    e.sampler.mr_threshold = static_cast<float>(cfg.get_double("sample.mr_threshold", 0.01));
    e.sampler.mr_steps = cfg.get_int("sample.mr_steps", 0);
    e.sampler.sr_steps = cfg.get_int("sample.sr_steps", 1);
    e.num_samples = cfg.get_int("sample.num_samples", 8);
    if (e.num_samples < 1) errors.push_back("sample.num_samples must be >= 1");

    e.eval_samples = cfg.get_int("eval.samples", 16);
    if (e.eval_samples < 2) errors.push_back("eval.samples must be >= 2");
    e.feat_side = cfg.get_int("eval.feat_side", 4);
    if (e.feat_side < 1) errors.push_back("eval.feat_side must be >= 1");
    e.cfg_sweep = cfg.get_doubles("eval.cfg_sweep", e.cfg_sweep);
    e.mr_sweep = cfg.get_doubles("eval.mr_sweep", e.mr_sweep);

    try {
        e.model.validate();
    } catch (const ConfigError& err) {
        errors.push_back(err.what());
    }
    try {
        e.sampler.validate();
    } catch (const ConfigError& err) {
        errors.push_back(err.what());
    }
    if (e.feat_side > e.model.schedule.max_side())
        errors.push_back("eval.feat_side must not exceed the top schedule side");

    if (!errors.empty()) {
        std::string msg = "config validation failed:";
        for (const auto& m : errors) msg += "\n  - " + m;
        throw ConfigError(msg);
    }
    return e;
}

struct MetricsReport {
    std::vector<double> snr_per_scale;  // corpus mean, dB; +inf when exact
    double token_accuracy = 0.0;
    double nats_per_token = 0.0;
    double codebook_usage_entropy = 0.0;  // nats
    double psnr_recon = 0.0;
    double ssim_recon = 0.0;
    double toy_frechet_value = 0.0;
};

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream ss;
    ss << std::setprecision(10) << v;
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

// Corpus loading + feature lift + codebook + fresh model, all derived from
// the experiment seed.
struct ExperimentSetup {
    ToyDataset dataset;
    FeatureLift lift;
    std::vector<Tensor> features;  // lifted corpus
    Codebook codebook;
    std::vector<TokenPyramid> pyramids;
};

inline ExperimentSetup prepare_setup(const ExperimentConfig& e) {
    ExperimentSetup s;
    const int side = e.model.schedule.max_side();
    s.dataset = e.data_source == "toy"
                    ? make_toy_dataset(e.classes, e.per_class, side, derive_seed(e.seed, 1))
                    : read_image_folder(e.folder, e.index, side, e.classes);
    s.lift = FeatureLift::make(e.model.feature_dim, derive_seed(e.seed, 2));
    for (const auto& sample : s.dataset.samples) s.features.push_back(s.lift.lift(sample.image));
    s.codebook = build_codebook(s.features, e.model.schedule, e.model.vocab_size,
                                derive_seed(e.seed, 3));
    for (size_t i = 0; i < s.features.size(); ++i) {
        TokenPyramid p = encode(s.features[i], e.model.schedule, s.codebook).pyramid;
        p.class_label = s.dataset.samples[i].class_label;
        s.pyramids.push_back(std::move(p));
    }
    return s;
}

inline MetricsReport compute_metrics(const ExperimentConfig& e, const ExperimentSetup& setup,
                                     const Model& model, const Codebook& cb,
                                     const FeatureLift& lift) {
    NoGradGuard ng;
    MetricsReport r;
    const auto& sched = model.config().schedule;
    const int S = sched.num_scales();

    // mean per-scale SNR over the corpus (per-image +inf propagates)
    r.snr_per_scale.assign(static_cast<size_t>(S), 0.0);
    for (const Tensor& f : setup.features) {
        const auto snr = snr_per_scale(f, sched);
        for (int k = 0; k < S; ++k) r.snr_per_scale[static_cast<size_t>(k)] += snr[static_cast<size_t>(k)];
    }
    for (auto& v : r.snr_per_scale) v /= static_cast<double>(setup.features.size());

    // teacher-forced token accuracy and nats/token over an eval subset
    const size_t eval_n = std::min<size_t>(setup.pyramids.size(),
                                           static_cast<size_t>(e.eval_samples));
    const MaskMatrix mask = build_mask({e.mask, sched});
    std::int64_t correct = 0, total = 0;
    double nats = 0.0;
    for (size_t i = 0; i < eval_n; ++i) {
        const TokenPyramid& p = setup.pyramids[i];
        ModelInputs in = build_teacher_inputs(p, cb);
        Tensor logits = model.forward(in, p.class_label.value_or(model.null_class()), mask);
        int row = 0;
        for (int k = 0; k < S; ++k)
            for (int c = 0; c < sched.tokens_at(k); ++c, ++row) {
                const float* lr = logits.data().data() +
                                  static_cast<size_t>(row) * model.config().vocab_size;
                int best = 0;
                for (int j = 1; j < model.config().vocab_size; ++j)
                    if (lr[j] > lr[best]) best = j;
                if (best == p.tokens[static_cast<size_t>(k)][static_cast<size_t>(c)]) ++correct;
                ++total;
            }
        nats += var_loss(model, p, cb, mask);
    }
    r.token_accuracy = total ? static_cast<double>(correct) / total : 0.0;
    r.nats_per_token = eval_n ? nats / static_cast<double>(eval_n) : 0.0;

    // codebook usage entropy over the encoded corpus
    std::vector<std::int64_t> hist(static_cast<size_t>(cb.vocab_size), 0);
    std::int64_t count = 0;
    for (const auto& p : setup.pyramids)
        for (const auto& grid : p.tokens)
            for (std::int32_t t : grid) {
                ++hist[static_cast<size_t>(t)];
                ++count;
            }
    double entropy = 0.0;
    for (std::int64_t h : hist)
        if (h > 0) {
            const double pr = static_cast<double>(h) / count;
            entropy -= pr * std::log(pr);
        }
    r.codebook_usage_entropy = entropy;

    // tokenizer round-trip fidelity in pixel space
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (size_t i = 0; i < eval_n; ++i) {
        Tensor rec = lift.unlift(decode(setup.pyramids[i], cb));
        psnr_sum += psnr(setup.dataset.samples[i].image, rec);
        ssim_sum += ssim(setup.dataset.samples[i].image, rec);
    }
    r.psnr_recon = eval_n ? psnr_sum / static_cast<double>(eval_n) : 0.0;
    r.ssim_recon = eval_n ? ssim_sum / static_cast<double>(eval_n) : 0.0;

    // Frechet proxy: generated set vs corpus
    std::vector<Tensor> generated;
    for (int i = 0; i < e.eval_samples; ++i) {
        SamplerConfig sc = e.sampler;
        sc.seed = derive_seed(e.seed, 1000 + static_cast<std::uint64_t>(i));
        const int label = i % e.classes;
        const auto gen = generate(model, cb, label, sc, e.mask);
        generated.push_back(lift.unlift(decode(gen.pyramid, cb)));
    }
    std::vector<Tensor> corpus;
    for (const auto& sample : setup.dataset.samples) corpus.push_back(sample.image);
    r.toy_frechet_value = toy_frechet(generated, corpus, e.feat_side);
    return r;
}

struct ExperimentResult {
    MetricsReport report;
    std::vector<float> loss_curve;
    std::string checkpoint_path;
};

// Full driver. dry_run validates the config and touches no files.
inline std::optional<ExperimentResult> run_experiment(const ExperimentConfig& e,
                                                      const std::string& out_dir, bool dry_run,
                                                      std::ostream& log) {
    if (dry_run) {
        log << "config ok (dry run)\n";
        return std::nullopt;
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    ExperimentSetup setup = prepare_setup(e);
    log << "corpus: " << setup.dataset.samples.size() << " images, side "
        << e.model.schedule.max_side() << ", vocab " << e.model.vocab_size << "\n";

    Model model(e.model, derive_seed(e.seed, 4));
    TrainState state(std::move(model), setup.codebook, setup.lift, e.optim, e.seed, e.mask);

    ExperimentResult result;
    const AttentionMaskSpec mask_spec{e.mask, e.model.schedule};
    StreamRng rng(e.seed);
    for (int step = 0; step < e.steps; ++step) {
        std::vector<TokenPyramid> batch;
        for (int b = 0; b < e.batch_size; ++b) {
            const size_t pick = static_cast<size_t>(
                rng.raw(rng_domain::kBatch, static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(b)) %
                setup.pyramids.size());
            batch.push_back(setup.pyramids[pick]);
        }
        const float loss =
            state.model.train_step(batch, state.codebook, mask_spec, state.optimizer, rng, step);
        result.loss_curve.push_back(loss);
        if (step % e.log_every == 0 || step + 1 == e.steps)
            log << "step " << step << " loss " << loss << "\n";
    }

    result.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    save_train_state(result.checkpoint_path, state);

    result.report = compute_metrics(e, setup, state.model, state.codebook, state.lift);

    // sample gallery
    fs::create_directories(fs::path(out_dir) / "samples");
    for (int i = 0; i < e.num_samples; ++i) {
        SamplerConfig sc = e.sampler;
        sc.seed = derive_seed(e.seed, 2000 + static_cast<std::uint64_t>(i));
        const int label = i % e.classes;
        const auto gen = generate(state.model, state.codebook, label, sc, e.mask);
        Tensor img = state.lift.unlift(decode(gen.pyramid, state.codebook));
        std::ostringstream name;
        name << "sample_" << std::setw(3) << std::setfill('0') << i << "_class" << label << ".ppm";
        write_ppm((fs::path(out_dir) / "samples" / name.str()).string(), img);
    }

    // loss curve
    {
        std::string tsv = "step\tloss\n";
        for (size_t i = 0; i < result.loss_curve.size(); ++i)
            tsv += std::to_string(i) + "\t" + detail::fmt_double(result.loss_curve[i]) + "\n";
        detail::write_text_file((fs::path(out_dir) / "loss_curve.tsv").string(), tsv);
    }

    // per-scale SNR curve
    {
        std::string tsv = "scale_side\tsnr_db\n";
        for (int k = 0; k < e.model.schedule.num_scales(); ++k)
            tsv += std::to_string(e.model.schedule.side(k)) + "\t" +
                   detail::fmt_double(result.report.snr_per_scale[static_cast<size_t>(k)]) + "\n";
        detail::write_text_file((fs::path(out_dir) / "snr_curve.tsv").string(), tsv);
    }

    // Frechet proxy vs guidance weight
    {
        std::vector<Tensor> corpus;
        for (const auto& s : setup.dataset.samples) corpus.push_back(s.image);
        std::string tsv = "cfg_weight\tfrechet\n";
        for (double w : e.cfg_sweep) {
            std::vector<Tensor> gen_imgs;
            for (int i = 0; i < e.eval_samples; ++i) {
                SamplerConfig sc = e.sampler;
                sc.cfg_weight = static_cast<float>(w);
                sc.seed = derive_seed(e.seed, 3000 + static_cast<std::uint64_t>(i));
                const auto gen = generate(state.model, state.codebook, i % e.classes, sc, e.mask);
                gen_imgs.push_back(state.lift.unlift(decode(gen.pyramid, state.codebook)));
            }
            tsv += detail::fmt_double(w) + "\t" +
                   detail::fmt_double(toy_frechet(gen_imgs, corpus, e.feat_side)) + "\n";
        }
        detail::write_text_file((fs::path(out_dir) / "frechet_vs_cfg.tsv").string(), tsv);
    }

    // refined-fraction vs threshold on a fixed context
    {
        SamplerConfig sc = e.sampler;
        sc.seed = derive_seed(e.seed, 4000);
        sc.mr_steps = 0;
        const auto base = generate(state.model, state.codebook, 0, sc, e.mask);
        const int last = e.model.schedule.num_scales() - 1;
        std::string tsv = "threshold\trefined_fraction\n";
        for (double th : e.mr_sweep) {
            TokenPyramid probe = base.pyramid;
            SamplerConfig mc = sc;
            mc.mr_threshold = static_cast<float>(th);
            mc.mr_steps = 1;
            const auto stats = masked_resample(state.model, state.codebook, probe, last, mc, e.mask);
            tsv += detail::fmt_double(th) + "\t" +
                   detail::fmt_double(stats.refined_fraction.at(0)) + "\n";
        }
        detail::write_text_file((fs::path(out_dir) / "mr_sweep.tsv").string(), tsv);
    }

    // report table + machine-readable summary
    {
        const MetricsReport& r = result.report;
        std::string tsv = "metric\tvalue\n";
        for (int k = 0; k < e.model.schedule.num_scales(); ++k)
            tsv += "snr_db_side" + std::to_string(e.model.schedule.side(k)) + "\t" +
                   detail::fmt_double(r.snr_per_scale[static_cast<size_t>(k)]) + "\n";
        tsv += "token_accuracy\t" + detail::fmt_double(r.token_accuracy) + "\n";
        tsv += "nats_per_token\t" + detail::fmt_double(r.nats_per_token) + "\n";
        tsv += "codebook_usage_entropy\t" + detail::fmt_double(r.codebook_usage_entropy) + "\n";
        tsv += "psnr_recon_db\t" + detail::fmt_double(r.psnr_recon) + "\n";
        tsv += "ssim_recon\t" + detail::fmt_double(r.ssim_recon) + "\n";
        tsv += "toy_frechet\t" + detail::fmt_double(r.toy_frechet_value) + "\n";
        detail::write_text_file((fs::path(out_dir) / "report.tsv").string(), tsv);

        nlohmann::json j;
        j["snr_per_scale_db"] = nlohmann::json::array();
        for (double v : r.snr_per_scale) {
            if (std::isinf(v))
                j["snr_per_scale_db"].push_back(nullptr);  // exact reconstruction
            else
                j["snr_per_scale_db"].push_back(v);
        }
        j["token_accuracy"] = r.token_accuracy;
        j["nats_per_token"] = r.nats_per_token;
        j["codebook_usage_entropy"] = r.codebook_usage_entropy;
        if (std::isinf(r.psnr_recon))
            j["psnr_recon_db"] = nullptr;
        else
            j["psnr_recon_db"] = r.psnr_recon;
        j["ssim_recon"] = r.ssim_recon;
        j["toy_frechet"] = r.toy_frechet_value;
        j["final_loss"] = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
        j["steps"] = e.steps;
        j["mask"] = mask_kind_name(e.mask);
        detail::write_text_file((fs::path(out_dir) / "summary.json").string(), j.dump(2) + "\n");
    }

    log << "report written to " << out_dir << "\n";
    return result;
}

}  // namespace srdd
