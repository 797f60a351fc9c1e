// srdd command-line tool: scale-wise generation with a discrete-diffusion
// sampling stack. Subcommands cover dataset generation, tokenization,
// training, sampling, zero-shot editing, schedule distillation, cost
// accounting, the equivalence verification suite, and evaluation.
//
// Exit codes: 0 success, 2 validation/config error, 3 numeric failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "srdd/checkpoint.hpp"
#include "srdd/config.hpp"
#include "srdd/dataset.hpp"
#include "srdd/diffusion.hpp"
#include "srdd/distill.hpp"
#include "srdd/experiment.hpp"
#include "srdd/image_io.hpp"
#include "srdd/metrics.hpp"
#include "srdd/model.hpp"
#include "srdd/pyramid_io.hpp"
#include "srdd/sampler.hpp"
#include "srdd/tokenizer.hpp"
#include "srdd/verify.hpp"

namespace {

using namespace srdd;

std::uint64_t apply_env_seed(std::uint64_t seed) {
    if (const char* env = std::getenv("SRDD_SEED")) return std::stoull(env);
    return seed;
}

// Square image at the exact side, or area-averaged down when larger.
Tensor load_image_at_side(const std::string& path, int side) {
    Tensor img = read_ppm(path);
    if (img.extent(0) != img.extent(1))
        throw ValidationError("image " + path + " is not square");
    if (img.extent(0) < side)
        throw ValidationError("image " + path + " is smaller than required side " +
                              std::to_string(side));
    if (img.extent(0) > side) return downsample(img, side);
    return img;
}

ScaleSchedule schedule_from_arg(const std::string& arg) {
    if (std::filesystem::exists(arg)) {
        const TrainState st = load_train_state(arg);
        return st.model.config().schedule;
    }
    return schedule_from_string(arg);
}

int run(int argc, char** argv) {
    CLI::App app{"scale-wise discrete-diffusion image generation"};
    app.require_subcommand(1);

    // ---------------- make-dataset ----------------
    auto* mk = app.add_subcommand("make-dataset", "write the procedural toy corpus as P6 files");
    int mk_classes = 4, mk_per_class = 16, mk_side = 16;
    std::uint64_t mk_seed = 0;
    std::string mk_out = "dataset";
    mk->add_option("--classes", mk_classes, "number of classes");
    mk->add_option("--per-class", mk_per_class, "images per class");
    mk->add_option("--side", mk_side, "image side length");
    mk->add_option("--seed", mk_seed, "generator seed");
    mk->add_option("--out", mk_out, "output directory")->required();
    mk->callback([&] {
        const ToyDataset ds =
            make_toy_dataset(mk_classes, mk_per_class, mk_side, apply_env_seed(mk_seed));
        std::filesystem::create_directories(mk_out);
        std::string index;
        for (size_t i = 0; i < ds.samples.size(); ++i) {
            std::ostringstream name;
            name << "img_" << std::setw(4) << std::setfill('0') << i << ".ppm";
            write_ppm((std::filesystem::path(mk_out) / name.str()).string(),
                      ds.samples[i].image);
            index += name.str() + "\t" + std::to_string(ds.samples[i].class_label) + "\n";
        }
        std::ofstream idx(std::filesystem::path(mk_out) / "labels.tsv");
        idx << index;
        std::cout << "wrote " << ds.samples.size() << " images to " << mk_out << "\n";
    });

    // ---------------- train ----------------
    auto* tr = app.add_subcommand("train", "run an experiment from a config file");
    std::string tr_config, tr_out = "run";
    bool tr_dry = false;
    tr->add_option("--config", tr_config, "experiment config file")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_flag("--dry-run", tr_dry, "validate the config and touch no files");
    tr->callback([&] {
        const ExperimentConfig e = parse_experiment_config(Config::parse_file(tr_config));
        run_experiment(e, tr_out, tr_dry, std::cout);
    });

    // ---------------- tokenize ----------------
    auto* tok = app.add_subcommand("tokenize",
                                   "encode an image to a token pyramid, or decode one back");
    std::string tok_ckpt, tok_image, tok_pyramid, tok_out;
    tok->add_option("--ckpt", tok_ckpt, "checkpoint (codebook + lift)")->required();
    tok->add_option("--image", tok_image, "P6 image to encode");
    tok->add_option("--pyramid", tok_pyramid, "pyramid file to decode");
    tok->add_option("--out", tok_out, "output path (.srdp when encoding, .ppm when decoding)")
        ->required();
    tok->callback([&] {
        const TrainState st = load_train_state(tok_ckpt);
        const ScaleSchedule& sched = st.model.config().schedule;
        if (tok_image.empty() == tok_pyramid.empty())
            throw ValidationError("tokenize: pass exactly one of --image / --pyramid");
        if (!tok_image.empty()) {
            Tensor img = load_image_at_side(tok_image, sched.max_side());
            TokenPyramid p = encode(st.lift.lift(img), sched, st.codebook).pyramid;
            write_pyramid(tok_out, p, st.codebook.vocab_size);
            std::cout << "encoded " << tok_image << " -> " << tok_out << " ("
                      << sched.total_tokens() << " tokens)\n";
        } else {
            const PyramidFile pf = read_pyramid(tok_pyramid);
            if (pf.vocab_size != st.codebook.vocab_size)
                throw ValidationError("tokenize: pyramid vocabulary does not match checkpoint");
            write_ppm(tok_out, st.lift.unlift(decode(pf.pyramid, st.codebook)));
            std::cout << "decoded " << tok_pyramid << " -> " << tok_out << "\n";
        }
    });

    // ---------------- sample ----------------
    auto* smp = app.add_subcommand("sample", "generate an image from a trained checkpoint");
    std::string smp_ckpt, smp_out = "sample.ppm", smp_out_pyramid, smp_mask;
    int smp_class = 0;
    SamplerConfig smp_cfg;
    smp->add_option("--ckpt", smp_ckpt, "checkpoint")->required();
    smp->add_option("--class", smp_class, "class label");
    smp->add_option("--cfg", smp_cfg.cfg_weight, "guidance weight");
    smp->add_option("--temperature", smp_cfg.temperature, "softmax temperature");
    smp->add_option("--top-k", smp_cfg.top_k, "top-k filter (0 disables)");
    smp->add_option("--mr-threshold", smp_cfg.mr_threshold, "resampling probability threshold");
    smp->add_option("--mr-steps", smp_cfg.mr_steps, "masked-resampling passes");
    smp->add_option("--sr-steps", smp_cfg.sr_steps, "simple-resampling draws per scale");
    smp->add_option("--seed", smp_cfg.seed, "sampling seed");
    smp->add_option("--mask", smp_mask, "mask kind override (markovian|block_causal|full)");
    smp->add_option("--out", smp_out, "output image path");
    smp->add_option("--out-pyramid", smp_out_pyramid, "also write the token pyramid");
    smp->callback([&] {
        const TrainState st = load_train_state(smp_ckpt);
        smp_cfg.seed = apply_env_seed(smp_cfg.seed);
        if (smp_class < 0 || smp_class >= st.model.config().num_classes)
            throw ValidationError("sample: class outside [0, " +
                                  std::to_string(st.model.config().num_classes) + ")");
        const MaskKind kind = smp_mask.empty() ? st.mask_kind : mask_kind_from_name(smp_mask);
        const GenerateResult gen = generate(st.model, st.codebook, smp_class, smp_cfg, kind);
        write_ppm(smp_out, st.lift.unlift(decode(gen.pyramid, st.codebook)));
        if (!smp_out_pyramid.empty())
            write_pyramid(smp_out_pyramid, gen.pyramid, st.codebook.vocab_size);
        for (const auto& s : gen.mr_stats)
            for (size_t pass = 0; pass < s.refined_fraction.size(); ++pass)
                std::cout << "mr scale " << s.scale << " pass " << pass << " refined "
                          << s.refined_fraction[pass] << "\n";
        std::cout << "wrote " << smp_out << "\n";
    });

    // ---------------- edit ----------------
    auto* ed = app.add_subcommand("edit", "zero-shot inpaint / outpaint / super-resolution");
    std::string ed_ckpt, ed_task, ed_image, ed_mask_path, ed_out = "edit.ppm", ed_out_pyramid,
                ed_mask_kind;
    int ed_class = 0;
    SamplerConfig ed_cfg;
    ed->add_option("--ckpt", ed_ckpt, "checkpoint")->required();
    ed->add_option("--task", ed_task, "inpaint | outpaint | sr")->required();
    ed->add_option("--image", ed_image, "source image (full side; for sr, the low-res side)")
        ->required();
    ed->add_option("--mask", ed_mask_path, "P5 mask, 255=known, 0=unknown (inpaint/outpaint)");
    ed->add_option("--class", ed_class, "class label");
    ed->add_option("--cfg", ed_cfg.cfg_weight, "guidance weight");
    ed->add_option("--temperature", ed_cfg.temperature, "softmax temperature");
    ed->add_option("--top-k", ed_cfg.top_k, "top-k filter (0 disables)");
    ed->add_option("--mr-threshold", ed_cfg.mr_threshold, "resampling probability threshold");
    ed->add_option("--mr-steps", ed_cfg.mr_steps, "masked-resampling passes");
    ed->add_option("--sr-steps", ed_cfg.sr_steps, "simple-resampling draws per scale");
    ed->add_option("--seed", ed_cfg.seed, "sampling seed");
    ed->add_option("--mask-kind", ed_mask_kind, "attention mask override");
    ed->add_option("--out", ed_out, "output image path");
    ed->add_option("--out-pyramid", ed_out_pyramid, "also write the token pyramid");
    ed->callback([&] {
        const TrainState st = load_train_state(ed_ckpt);
        ed_cfg.seed = apply_env_seed(ed_cfg.seed);
        const EditTask task = edit_task_from_name(ed_task);
        const MaskKind kind =
            ed_mask_kind.empty() ? st.mask_kind : mask_kind_from_name(ed_mask_kind);
        const int N = st.model.config().schedule.max_side();
        GenerateResult gen = [&] {
            if (task == EditTask::super_res) {
                Tensor img = read_ppm(ed_image);
                if (img.extent(0) != img.extent(1))
                    throw ValidationError("edit: source image is not square");
                return edit(st.model, st.codebook, st.lift.lift(img), nullptr, task, ed_class,
                            ed_cfg, kind);
            }
            if (ed_mask_path.empty())
                throw ValidationError("edit: inpaint/outpaint need --mask");
            Tensor img = load_image_at_side(ed_image, N);
            int mh = 0, mw = 0;
            auto grid = read_pgm_mask(ed_mask_path, mh, mw);
            if (mh != N || mw != N)
                throw ValidationError("edit: mask must be " + std::to_string(N) + "x" +
                                      std::to_string(N));
            const EditMask mask = EditMask::from_grid(N, std::move(grid));
            return edit(st.model, st.codebook, st.lift.lift(img), &mask, task, ed_class, ed_cfg,
                        kind);
        }();
        write_ppm(ed_out, st.lift.unlift(decode(gen.pyramid, st.codebook)));
        if (!ed_out_pyramid.empty())
            write_pyramid(ed_out_pyramid, gen.pyramid, st.codebook.vocab_size);
        std::cout << "wrote " << ed_out << "\n";
    });

    // ---------------- distill ----------------
    auto* ds = app.add_subcommand("distill", "fine-tune a student on a pruned scale schedule");
    std::string ds_teacher, ds_keep, ds_out = "student.ckpt", ds_config;
    int ds_steps = 300, ds_batch = 8;
    double ds_lr = -1.0;
    bool ds_override = false;
    ds->add_option("--teacher", ds_teacher, "teacher checkpoint")->required();
    ds->add_option("--keep", ds_keep, "comma-separated sides to retain")->required();
    ds->add_option("--steps", ds_steps, "fine-tuning steps");
    ds->add_option("--batch-size", ds_batch, "fine-tuning batch size");
    ds->add_option("--lr", ds_lr, "fine-tuning learning rate (default: teacher's)");
    ds->add_option("--config", ds_config, "experiment config for corpus regeneration");
    ds->add_flag("--allow-top-two-violation", ds_override,
                 "permit dropping one of the two largest sides");
    ds->add_option("--out", ds_out, "student checkpoint path");
    ds->callback([&] {
        const TrainState teacher = load_train_state(ds_teacher);
        std::vector<int> keep;
        {
            std::istringstream ss(ds_keep);
            std::string tokstr;
            while (std::getline(ss, tokstr, ',')) keep.push_back(std::stoi(tokstr));
        }
        const PruneSpec spec =
            prune_schedule(teacher.model.config().schedule, keep, ds_override);
        ExperimentConfig e;
        if (!ds_config.empty()) e = parse_experiment_config(Config::parse_file(ds_config));
        e.model = teacher.model.config();
        e.seed = apply_env_seed(teacher.train_seed);
        ExperimentSetup setup;
        {
            // regenerate the corpus the teacher saw, but re-encode under the
            // student schedule inside finetune_student
            const int side = teacher.model.config().schedule.max_side();
            setup.dataset = e.data_source == "toy"
                                ? make_toy_dataset(e.classes, e.per_class, side,
                                                   derive_seed(e.seed, 1))
                                : read_image_folder(e.folder, e.index, side, e.classes);
            for (const auto& s : setup.dataset.samples)
                setup.features.push_back(teacher.lift.lift(s.image));
        }
        std::vector<int> labels;
        for (const auto& s : setup.dataset.samples) labels.push_back(s.class_label);
        AdamWConfig oc = teacher.optimizer.config();
        if (ds_lr > 0.0) oc.lr = static_cast<float>(ds_lr);
        std::vector<float> losses;
        Model student = finetune_student(teacher.model, teacher.codebook, spec, setup.features,
                                         labels, ds_steps, ds_batch, oc,
                                         derive_seed(e.seed, 77), &losses);
        TrainState st(std::move(student), teacher.codebook, teacher.lift, oc,
                      teacher.train_seed, MaskKind::markovian);
        st.extra_config.emplace_back("distill.teacher_schedule",
                                     schedule_to_string(spec.teacher));
        st.extra_config.emplace_back("distill.student_schedule",
                                     schedule_to_string(spec.student));
        st.extra_config.emplace_back("distill.steps", std::to_string(ds_steps));
        save_train_state(ds_out, st);
        if (!losses.empty())
            std::cout << "fine-tune loss " << losses.front() << " -> " << losses.back() << "\n";
        const CostReport r = cost_report(spec, MaskKind::markovian);
        std::cout << "student written to " << ds_out << " (tokens " << r.teacher_tokens
                  << " -> " << r.student_tokens << ", passes " << r.teacher_passes << " -> "
                  << r.student_passes << ")\n";
    });

    // ---------------- cost ----------------
    auto* cst = app.add_subcommand("cost", "analytic cost report for a schedule pruning");
    std::string cst_teacher, cst_student, cst_mask = "markovian";
    cst->add_option("--teacher", cst_teacher, "teacher schedule CSV or checkpoint")->required();
    cst->add_option("--student", cst_student, "student schedule CSV or checkpoint")->required();
    cst->add_option("--mask", cst_mask, "mask kind for attention-pair accounting");
    cst->callback([&] {
        const ScaleSchedule teacher = schedule_from_arg(cst_teacher);
        const ScaleSchedule student = schedule_from_arg(cst_student);
        const PruneSpec spec = prune_schedule(teacher, student.sides(), true);
        const MaskKind kind = mask_kind_from_name(cst_mask);
        const CostReport r = cost_report(spec, kind);
        std::cout << "metric\tteacher\tstudent\tratio\n";
        std::cout << "tokens\t" << r.teacher_tokens << "\t" << r.student_tokens << "\t"
                  << r.token_count_ratio << "\n";
        std::cout << "attention_pairs(" << mask_kind_name(kind) << ")\t"
                  << r.teacher_attention_pairs << "\t" << r.student_attention_pairs << "\t"
                  << r.attention_pair_ratio << "\n";
        std::cout << "passes\t" << r.teacher_passes << "\t" << r.student_passes << "\t"
                  << r.pass_count_ratio << "\n";
        std::cout << "peak_kv(" << mask_kind_name(kind) << ")\t" << r.teacher_peak_kv << "\t"
                  << r.student_peak_kv << "\t" << r.kv_retention_ratio << "\n";
    });

    // ---------------- verify-equivalence ----------------
    auto* ver = app.add_subcommand("verify-equivalence",
                                   "run the loss/KL/mask oracle suite and print a table");
    ver->callback([&] {
        if (!print_verify_table(run_equivalence_suite(), std::cout))
            throw NumericError("verification suite failed");
    });

    // ---------------- eval ----------------
    auto* ev = app.add_subcommand("eval", "metrics report for a trained checkpoint");
    std::string ev_ckpt, ev_config, ev_out;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--config", ev_config, "experiment config (dataset regeneration)")->required();
    ev->add_option("--out", ev_out, "optional directory for report files");
    ev->callback([&] {
        const TrainState st = load_train_state(ev_ckpt);
        ExperimentConfig e = parse_experiment_config(Config::parse_file(ev_config));
        // the checkpoint is authoritative for the model; the config supplies
        // the dataset and evaluation knobs
        e.model = st.model.config();
        e.classes = st.model.config().num_classes;
        e.mask = st.mask_kind;
        ExperimentSetup setup;
        {
            const int side = st.model.config().schedule.max_side();
            setup.dataset = e.data_source == "toy"
                                ? make_toy_dataset(e.classes, e.per_class, side,
                                                   derive_seed(e.seed, 1))
                                : read_image_folder(e.folder, e.index, side, e.classes);
            setup.lift = st.lift;
            for (const auto& s : setup.dataset.samples)
                setup.features.push_back(st.lift.lift(s.image));
            setup.codebook = st.codebook;
            for (size_t i = 0; i < setup.features.size(); ++i) {
                TokenPyramid p = encode(setup.features[i], e.model.schedule, st.codebook).pyramid;
                p.class_label = setup.dataset.samples[i].class_label;
                setup.pyramids.push_back(std::move(p));
            }
        }
        const MetricsReport r = compute_metrics(e, setup, st.model, st.codebook, st.lift);
        std::cout << "metric\tvalue\n";
        for (int k = 0; k < e.model.schedule.num_scales(); ++k)
            std::cout << "snr_db_side" << e.model.schedule.side(k) << "\t"
                      << r.snr_per_scale[static_cast<size_t>(k)] << "\n";
        std::cout << "token_accuracy\t" << r.token_accuracy << "\n";
        std::cout << "nats_per_token\t" << r.nats_per_token << "\n";
        std::cout << "codebook_usage_entropy\t" << r.codebook_usage_entropy << "\n";
        std::cout << "psnr_recon_db\t" << r.psnr_recon << "\n";
        std::cout << "ssim_recon\t" << r.ssim_recon << "\n";
        std::cout << "toy_frechet\t" << r.toy_frechet_value << "\n";
        if (!ev_out.empty()) {
            std::filesystem::create_directories(ev_out);
            std::ostringstream tsv;
            tsv << "metric\tvalue\n";
            tsv << "token_accuracy\t" << r.token_accuracy << "\n";
            tsv << "nats_per_token\t" << r.nats_per_token << "\n";
            tsv << "toy_frechet\t" << r.toy_frechet_value << "\n";
            std::ofstream out(std::filesystem::path(ev_out) / "eval.tsv");
            out << tsv.str();
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // command-line validation error
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const srdd::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const srdd::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const srdd::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
