// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: data generation, teacher training, segmented
// consistency distillation, sampling, evaluation, oracle checks and the
// ablation grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scd/checkpoint.hpp"
#include "scd/config.hpp"
#include "scd/distill.hpp"
#include "scd/io.hpp"
#include "scd/metrics.hpp"
#include "scd/oracle.hpp"
#include "scd/sampling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scd;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_override;
};

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? default_run_config()
                                             : load_run_config(args.config_path);
    if (!args.sets.empty()) cfg = apply_overrides(cfg, args.sets);
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    return cfg;
}

fs::path prepare_run_dir(const RunConfig& cfg) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    io::write_text_file(dir / "resolved_config.json", cfg.to_json());
    return dir;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (defaults when omitted)");
    cmd->add_option("--set", args.sets, "dotted-path overrides, e.g. distill.lambda1=0");
    cmd->add_option("--out", args.out_override, "run directory (overrides out_dir)");
}

std::vector<VideoClip> make_eval_clips(const RunConfig& cfg) {
    std::vector<VideoClip> clips;
    for (int i = 0; i < cfg.eval_clips; ++i)
        clips.push_back(generate_clip(cfg.eval_seed + static_cast<uint64_t>(i), cfg.frames,
                                      cfg.height, cfg.width));
    return clips;
}

EvalContext make_eval_context(const RunConfig& cfg) {
    EvalContext ctx;
    ctx.sched = cfg.schedule();
    ctx.seg = make_segments(cfg.distill.K, cfg.timesteps);
    ctx.ae = cfg.autoencoder();
    ctx.face_crop = cfg.face_crop;
    ctx.feature_seed = cfg.feature_seed;
    ctx.feature_dim = cfg.feature_dim;
    ctx.use_face = cfg.face_enabled;
    ctx.config_digest = cfg.digest();
    return ctx;
}

ModelParams load_model_for_sampling(const fs::path& path, bool raw_student) {
    LoadedCheckpoint lc = load_checkpoint(path);
    if (!raw_student && lc.state.has_ema) return lc.state.ema;
    return lc.state.student;
}

int cmd_gen_data(const RunConfig& cfg) {
    fs::path dir = prepare_run_dir(cfg);
    for (auto [name, count, seed0] :
         {std::tuple{"train", cfg.train_clips, cfg.train_seed},
          std::tuple{"eval", cfg.eval_clips, cfg.eval_seed}}) {
        for (int i = 0; i < count; ++i) {
            VideoClip clip =
                generate_clip(seed0 + static_cast<uint64_t>(i), cfg.frames, cfg.height, cfg.width);
            char sub[64];
            std::snprintf(sub, sizeof(sub), "%s/clip_%04d", name, i);
            save_clip(dir / "data" / sub, clip);
        }
    }
    std::printf("wrote %d train + %d eval clips under %s/data\n", cfg.train_clips, cfg.eval_clips,
                dir.string().c_str());
    return 0;
}

int cmd_train_teacher(const RunConfig& cfg) {
    fs::path dir = prepare_run_dir(cfg);
    NoiseSchedule sched = cfg.schedule();
    ToyAutoencoder ae = cfg.autoencoder();
    InMemoryDataset data = build_clip_dataset(cfg.train_clips, cfg.train_seed, cfg.frames,
                                              cfg.height, cfg.width, ae, cfg.distill.delta,
                                              cfg.face_crop, cfg.face_enabled);
    std::ofstream log(dir / "teacher_log.jsonl");
    ModelParams teacher = run_teacher_training(
        cfg.model_config(), data, sched, cfg.teacher_steps, cfg.teacher_lr, cfg.teacher_batch,
        cfg.uncond_drop_prob, cfg.seed, [&](int64_t step, double loss) {
            log << json{{"step", step}, {"loss", loss}}.dump() << "\n";
            if (step % 250 == 0)
                std::printf("teacher step %6lld  loss %.5f\n", static_cast<long long>(step), loss);
        });

    TrainState state;
    state.student = teacher;
    state.opt = AdamState::init_for(teacher.params);
    state.step = cfg.teacher_steps;
    CheckpointMeta meta;
    meta.phase = "teacher";
    meta.step = state.step;
    meta.config_digest = cfg.digest();
    meta.schedule_kind = to_string(cfg.schedule_kind);
    meta.timesteps = cfg.timesteps;
    save_checkpoint(state, meta, dir / "teacher.ckpt");
    std::printf("teacher checkpoint: %s\n", (dir / "teacher.ckpt").string().c_str());
    return 0;
}

int cmd_distill(const RunConfig& cfg, const std::string& teacher_path,
                const std::string& resume_path, bool force) {
    fs::path dir = prepare_run_dir(cfg);
    NoiseSchedule sched = cfg.schedule();
    ToyAutoencoder ae = cfg.autoencoder();
    InMemoryDataset data = build_clip_dataset(cfg.train_clips, cfg.train_seed, cfg.frames,
                                              cfg.height, cfg.width, ae, cfg.distill.delta,
                                              cfg.face_crop, cfg.face_enabled);
    std::vector<VideoClip> eval_clips = make_eval_clips(cfg);
    EvalContext ctx = make_eval_context(cfg);

    TrainState state;
    if (!resume_path.empty()) {
        state = load_checkpoint(resume_path, cfg.digest(), force).state;
        std::printf("resuming from step %lld\n", static_cast<long long>(state.step));
    } else {
        fs::path tpath = teacher_path.empty() ? dir / "teacher.ckpt" : fs::path(teacher_path);
        if (!fs::exists(tpath))
            throw ConfigError("distill: teacher checkpoint not found at " + tpath.string() +
                              " (run train-teacher first or pass --teacher)");
        LoadedCheckpoint teacher = load_checkpoint(tpath, "", true);
        state = init_distillation(teacher.state.student, cfg.distill);
    }

    CheckpointMeta meta;
    meta.phase = "distill";
    meta.config_digest = cfg.digest();
    meta.schedule_kind = to_string(cfg.schedule_kind);
    meta.timesteps = cfg.timesteps;
    meta.segments = cfg.distill.K;

    std::ofstream log(dir / "log.jsonl", resume_path.empty() ? std::ios::out : std::ios::app);
    const auto ckpt_path = dir / "student.ckpt";
    distill_until(state, cfg.distill, data, sched, [&](int64_t step, const LossBreakdown& lb) {
        log << json{{"step", step},      {"cd", lb.cd_loss}, {"aux", lb.aux_loss},
                    {"total", lb.total}, {"o", lb.segment},  {"t_m", lb.t_m},
                    {"t_n", lb.t_n},     {"w", lb.w}}
                   .dump()
            << "\n";
        if (step % 250 == 0)
            std::printf("distill step %6lld  cd %.5f  aux %.5f\n", static_cast<long long>(step),
                        lb.cd_loss, lb.aux_loss);
        if (cfg.distill.eval_every > 0 && step % cfg.distill.eval_every == 0) {
            SamplePlan plan = plan_steps(cfg.sample_steps, ctx.seg);
            plan.noise_seed = cfg.seed + 0x9e3779b9ULL;
            EvalReport rep = evaluate_suite(state.ema, eval_clips, plan, ctx);
            log << json{{"step", step}, {"eval", json::parse(rep.to_json())}}.dump() << "\n";
        }
        if (cfg.distill.checkpoint_every > 0 && step % cfg.distill.checkpoint_every == 0) {
            meta.step = step;
            save_checkpoint(state, meta, ckpt_path);
        }
    });
    meta.step = state.step;
    save_checkpoint(state, meta, ckpt_path);
    std::printf("student checkpoint: %s\n", ckpt_path.string().c_str());
    return 0;
}

Tensor frame_of(const Tensor& pixels, int f) {
    Tensor out({pixels.dim(1), pixels.dim(2), pixels.dim(3)});
    const int64_t per = out.numel();
    for (int64_t k = 0; k < per; ++k) out[k] = pixels[f * per + k];
    return out;
}

// two-row contact sheet: ground truth on top, sample below
void write_contact_sheet(const fs::path& path, const VideoClip& gt, const VideoClip& sample) {
    const int C = 3, H = gt.height(), W = gt.width(), F = gt.frames;
    Tensor sheet({C, 2 * H + 2, F * (W + 1)});
    for (int f = 0; f < F; ++f)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    sheet.at3(c, y, f * (W + 1) + x) = gt.pixels.at4(f, c, y, x);
                    sheet.at3(c, H + 2 + y, f * (W + 1) + x) = sample.pixels.at4(f, c, y, x);
                }
    io::save_ppm(path, sheet);
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt, bool raw_student, int clip_count,
               uint64_t noise_seed) {
    fs::path dir = prepare_run_dir(cfg);
    ModelParams model = load_model_for_sampling(ckpt, raw_student);
    NoiseSchedule sched = cfg.schedule();
    ToyAutoencoder ae = cfg.autoencoder();
    TrajectorySegmentation seg = make_segments(cfg.distill.K, cfg.timesteps);
    SamplePlan plan = plan_steps(cfg.sample_steps, seg);

    const fs::path samples_dir = dir / "samples";
    fs::create_directories(samples_dir);
    json meta;
    meta["steps"] = plan.steps;
    meta["visit_t"] = plan.visit_t;
    meta["anchor_s"] = plan.anchor_s;
    meta["checkpoint"] = ckpt;
    meta["config_digest"] = cfg.digest();
    json clips_meta = json::array();

    for (int i = 0; i < clip_count; ++i) {
        VideoClip gt = generate_clip(cfg.eval_seed + static_cast<uint64_t>(i), cfg.frames,
                                     cfg.height, cfg.width);
        ConditionBundle cond = condition_from_clip(gt, ae, cfg.face_crop, cfg.face_enabled);
        SamplePlan p = plan;
        p.noise_seed = noise_seed + static_cast<uint64_t>(i);
        LatentVideo lat = multistep_sample(model, cond, p, sched, seg,
                                           {gt.frames, gt.channels(), gt.height() / ae.factor,
                                            gt.width() / ae.factor});
        VideoClip sample = clip_from_latents(lat, ae, gt);

        char sub[64];
        std::snprintf(sub, sizeof(sub), "clip_%04d", i);
        fs::path cdir = samples_dir / sub;
        fs::create_directories(cdir);
        for (int f = 0; f < sample.frames; ++f) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame_%03d.ppm", f);
            io::save_ppm(cdir / name, frame_of(sample.pixels, f));
        }
        write_contact_sheet(samples_dir / (std::string(sub) + "_sheet.ppm"), gt, sample);
        clips_meta.push_back({{"clip", sub}, {"noise_seed", p.noise_seed}, {"gt_seed", gt.seed}});
    }
    meta["clips"] = clips_meta;
    io::write_text_file(samples_dir / "metadata.json", meta.dump(2) + "\n");
    std::printf("wrote %d samples under %s\n", clip_count, samples_dir.string().c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt, bool raw_student) {
    fs::path dir = prepare_run_dir(cfg);
    ModelParams model = load_model_for_sampling(ckpt, raw_student);
    EvalContext ctx = make_eval_context(cfg);
    SamplePlan plan = plan_steps(cfg.sample_steps, ctx.seg);
    plan.noise_seed = cfg.seed + 0x9e3779b9ULL;
    EvalReport rep = evaluate_suite(model, make_eval_clips(cfg), plan, ctx);
    io::write_text_file(dir / "eval.json", rep.to_json() + "\n");
    std::printf("%s",
                rep.table("checkpoint@" + std::to_string(cfg.sample_steps) + "-step").c_str());
    return 0;
}

int cmd_oracle_check(const std::string& prior_name, int steps, double tolerance, int seeds,
                     const std::string& self_ckpt, const std::string& out_path) {
    NoiseSchedule sched = build_schedule(ScheduleKind::linear_beta, kDefaultTimesteps);
    oracle::GaussianMixturePrior prior;
    if (prior_name == "gaussian") {
        prior = oracle::GaussianMixturePrior::single({0.0}, {1.0});
    } else if (prior_name == "mixture2") {
        prior.dim = 1;
        prior.means = {{-1.2}, {1.2}};
        prior.variances = {{0.25}, {0.25}};
        prior.weights = {0.5, 0.5};
    } else {
        throw ConfigError("oracle-check: unknown prior " + prior_name);
    }

    std::string out;
    bool passed = false;
    if (self_ckpt.empty()) {
        oracle::SolverCheckReport rep =
            oracle::solver_consistency_check(prior, sched, steps, tolerance, seeds, 0);
        out = rep.to_json();
        passed = rep.passed;
    } else {
        LoadedCheckpoint lc = load_checkpoint(self_ckpt);
        if (!lc.state.has_teacher)
            throw ConfigError("oracle-check: checkpoint has no teacher parameters");
        const int d = lc.state.student.config.latent_channels;
        for (auto* field : {&prior.means, &prior.variances})
            for (auto& comp : *field)
                while (static_cast<int>(comp.size()) < d) comp.push_back(comp[0]);
        prior.dim = d;
        TrajectorySegmentation seg =
            make_segments(lc.meta.segments > 0 ? lc.meta.segments : 2, sched.num_timesteps);
        oracle::SelfConsistencyReport rep = oracle::distilled_self_consistency_check(
            lc.state.ema, lc.state.teacher, prior, seg, sched, tolerance, 192, 0);
        out = rep.to_json();
        passed = rep.passed;
    }
    std::printf("%s\n", out.c_str());
    if (!out_path.empty()) io::write_text_file(out_path, out + "\n");
    return passed ? 0 : 1;
}

int cmd_ablate(const RunConfig& base, const std::string& axis, const std::string& values_csv,
               const std::string& teacher_path, int parallel) {
    fs::path dir = prepare_run_dir(base);
    fs::path tpath = teacher_path.empty() ? dir / "teacher.ckpt" : fs::path(teacher_path);
    if (!fs::exists(tpath))
        throw ConfigError("ablate: teacher checkpoint not found at " + tpath.string());
    ModelParams teacher = load_checkpoint(tpath, "", true).state.student;

    struct Cell {
        std::string label;
        RunConfig cfg;
        int sample_steps;
    };
    std::vector<Cell> cells;
    auto parse_values = [&](std::vector<int> defaults) {
        if (values_csv.empty()) return defaults;
        std::vector<int> out;
        std::stringstream ss(values_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
        return out;
    };

    if (axis == "segments") {
        for (int K : parse_values({1, 2, 4})) {
            RunConfig c = base;
            c.distill.K = K;
            cells.push_back({"K=" + std::to_string(K), c, base.sample_steps});
        }
    } else if (axis == "steps") {
        for (int N : parse_values({1, 2, 4, 8})) cells.push_back({"N=" + std::to_string(N), base, N});
    } else if (axis == "motion") {
        for (int on : parse_values({1, 0})) {
            RunConfig c = base;
            c.distill.lambda1 = on ? base.distill.lambda1 : 0.0;
            cells.push_back({std::string("motion=") + (on ? "on" : "off"), c, base.sample_steps});
        }
    } else if (axis == "gt") {
        for (int on : parse_values({1, 0})) {
            RunConfig c = base;
            c.distill.lambda2 = on ? base.distill.lambda2 : 0.0;
            cells.push_back({std::string("gt=") + (on ? "on" : "off"), c, base.sample_steps});
        }
    } else if (axis == "face") {
        for (int on : parse_values({1, 0})) {
            RunConfig c = base;
            c.face_enabled = on != 0;
            cells.push_back({std::string("face=") + (on ? "on" : "off"), c, base.sample_steps});
        }
    } else {
        throw ConfigError("ablate: unknown axis " + axis + " (segments|steps|motion|gt|face)");
    }

    NoiseSchedule sched = base.schedule();
    ToyAutoencoder ae = base.autoencoder();
    std::vector<VideoClip> eval_clips = make_eval_clips(base);

    // one distillation serves every N on the steps axis
    const bool share_run = axis == "steps";
    std::vector<EvalReport> reports(cells.size());
    TrainState shared;
    if (share_run) {
        InMemoryDataset data = build_clip_dataset(base.train_clips, base.train_seed, base.frames,
                                                  base.height, base.width, ae, base.distill.delta,
                                                  base.face_crop, base.face_enabled);
        shared = init_distillation(teacher, base.distill);
        distill_until(shared, base.distill, data, sched);
    }

    auto run_cell = [&](size_t i) {
        const Cell& cell = cells[i];
        EvalContext ctx = make_eval_context(cell.cfg);
        SamplePlan plan = plan_steps(cell.sample_steps, ctx.seg);
        plan.noise_seed = cell.cfg.seed + 0x9e3779b9ULL;
        if (share_run) {
            reports[i] = evaluate_suite(shared.ema, eval_clips, plan, ctx);
            return;
        }
        InMemoryDataset data = build_clip_dataset(
            cell.cfg.train_clips, cell.cfg.train_seed, cell.cfg.frames, cell.cfg.height,
            cell.cfg.width, ae, cell.cfg.distill.delta, cell.cfg.face_crop,
            cell.cfg.face_enabled);
        DistillRunResult run = run_distillation(cell.cfg.distill, teacher, data, sched);
        reports[i] = evaluate_suite(run.state.ema, eval_clips, plan, ctx);
    };

    if (parallel > 1) {
        std::vector<std::future<void>> futs;
        for (size_t i = 0; i < cells.size(); ++i)
            futs.push_back(std::async(std::launch::async, run_cell, i));
        for (auto& f : futs) f.get();
    } else {
        for (size_t i = 0; i < cells.size(); ++i) {
            std::printf("[ablate] cell %s\n", cells[i].label.c_str());
            run_cell(i);
        }
    }

    json out = json::array();
    std::printf("%-24s %10s %8s %8s %10s %10s\n", "cell", "L1", "PSNR", "SSIM", "Frechet",
                "Identity");
    for (size_t i = 0; i < cells.size(); ++i) {
        const EvalReport& r = reports[i];
        std::printf("%-24s %10.2e %8.2f %8.4f %10.4f %10.4f\n", cells[i].label.c_str(), r.l1,
                    r.psnr, r.ssim, r.frechet, r.identity);
        json cell_json = json::parse(r.to_json());
        cell_json["cell"] = cells[i].label;
        out.push_back(cell_json);
    }
    io::write_text_file(dir / ("ablate_" + axis + ".json"), out.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segmented consistency distillation lab"};
    app.require_subcommand(1);

    CommonArgs gen_args, teacher_args, distill_args, sample_args, eval_args, ablate_args;

    auto* gen = app.add_subcommand("gen-data", "write the toy clip datasets to disk");
    add_common(gen, gen_args);

    auto* teach = app.add_subcommand("train-teacher", "pretrain the toy diffusion teacher");
    add_common(teach, teacher_args);

    auto* dist = app.add_subcommand("distill", "segmented consistency distillation");
    add_common(dist, distill_args);
    std::string teacher_path, resume_path;
    bool force = false;
    dist->add_option("--teacher", teacher_path,
                     "teacher checkpoint (default out_dir/teacher.ckpt)");
    dist->add_option("--resume", resume_path, "resume from a student checkpoint");
    dist->add_flag("--force", force, "ignore config digest mismatches on resume");

    auto* sample = app.add_subcommand("sample", "few-step sampling with contact sheets");
    add_common(sample, sample_args);
    std::string sample_ckpt;
    bool raw_student = false;
    int sample_count = 4;
    uint64_t noise_seed = 1234;
    sample->add_option("--checkpoint", sample_ckpt, "student checkpoint")->required();
    sample->add_flag("--raw-student", raw_student, "sample the raw student instead of the EMA");
    sample->add_option("--count", sample_count, "number of conditioning clips");
    sample->add_option("--noise-seed", noise_seed, "base noise seed");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the eval set");
    add_common(eval, eval_args);
    std::string eval_ckpt;
    bool eval_raw = false;
    eval->add_option("--checkpoint", eval_ckpt, "student checkpoint")->required();
    eval->add_flag("--raw-student", eval_raw, "evaluate the raw student instead of the EMA");

    auto* oracle_cmd = app.add_subcommand("oracle-check", "closed-form solver verification");
    std::string prior_name = "gaussian", self_ckpt, oracle_out;
    int oracle_steps = 100, oracle_seeds = 2000;
    double tolerance = 0.05;
    oracle_cmd->add_option("--prior", prior_name, "gaussian | mixture2");
    oracle_cmd->add_option("--steps", oracle_steps, "solver steps");
    oracle_cmd->add_option("--tolerance", tolerance, "W1 / boundary tolerance");
    oracle_cmd->add_option("--seeds", oracle_seeds, "number of chains");
    oracle_cmd->add_option("--self-checkpoint", self_ckpt,
                           "vector-task student checkpoint: run the self-consistency probe");
    oracle_cmd->add_option("--report", oracle_out, "write the JSON report here");

    auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
    add_common(ablate, ablate_args);
    std::string axis, values_csv, ablate_teacher;
    int parallel = 1;
    ablate->add_option("--axis", axis, "segments | steps | motion | gt | face")->required();
    ablate->add_option("--values", values_csv, "comma-separated cell values");
    ablate->add_option("--teacher", ablate_teacher, "teacher checkpoint");
    ablate->add_option("--parallel", parallel, "concurrent cells (opt-in)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(resolve_config(gen_args));
        if (teach->parsed()) return cmd_train_teacher(resolve_config(teacher_args));
        if (dist->parsed())
            return cmd_distill(resolve_config(distill_args), teacher_path, resume_path, force);
        if (sample->parsed())
            return cmd_sample(resolve_config(sample_args), sample_ckpt, raw_student, sample_count,
                              noise_seed);
        if (eval->parsed()) return cmd_eval(resolve_config(eval_args), eval_ckpt, eval_raw);
        if (oracle_cmd->parsed())
            return cmd_oracle_check(prior_name, oracle_steps, tolerance, oracle_seeds, self_ckpt,
                                    oracle_out);
        if (ablate->parsed())
            return cmd_ablate(resolve_config(ablate_args), axis, values_csv, ablate_teacher,
                              parallel);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "integrity error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
