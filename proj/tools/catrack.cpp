// catrack: generate / train / track / eval / dump-activations / plot.
//
// Every hyperparameter is a flat `key = value` config entry; precedence is
// CLI --set override > config file > built-in default. The resolved values
// are logged to stderr at run start. Data goes to files, logs to stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "cat/config.hpp"
#include "cat/metrics.hpp"
#include "cat/model.hpp"
#include "cat/patch.hpp"
#include "cat/synth.hpp"
#include "cat/tracker.hpp"
#include "cat/training.hpp"

namespace fs = std::filesystem;
using namespace cat;

namespace {

// Resolves keys with CLI > file > default precedence and remembers every
// value it handed out, so the run header lists the effective configuration.
class Resolver {
 public:
  Resolver(const std::string& config_path, const std::vector<std::string>& sets,
           std::uint64_t* seed_flag) {
    if (!config_path.empty()) cfg_ = Config::load(config_path);
    for (const std::string& kv : sets) {
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
      cfg_.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (seed_flag) cfg_.set("seed", std::to_string(*seed_flag));
  }

  double real(const std::string& key, double def) {
    return log_(key, cfg_.get_double(key, def));
  }
  int integer(const std::string& key, int def) {
    return log_(key, cfg_.get_int(key, def));
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    return log_(key, cfg_.get_u64(key, def));
  }
  std::string str(const std::string& key, const std::string& def) {
    return log_(key, cfg_.get(key, def));
  }

  void print(const std::string& subcommand) const {
    std::cerr << "catrack " << subcommand << " configuration:\n";
    for (const auto& [k, v] : seen_) std::cerr << "  " << k << " = " << v << "\n";
  }

 private:
  template <typename T>
  T log_(const std::string& key, T v) {
    std::ostringstream os;
    os << v;
    seen_.emplace_back(key, os.str());
    return v;
  }

  Config cfg_;
  std::vector<std::pair<std::string, std::string>> seen_;
};

NetConfig resolve_net(Resolver& r) {
  NetConfig def;
  if (r.str("net.preset", "full") == "desk") def = NetConfig::desk();
  NetConfig c = def;
  auto ch = split_char(r.str("net.channels", std::to_string(def.channels[0]) + "," +
                                                 std::to_string(def.channels[1]) + "," +
                                                 std::to_string(def.channels[2])),
                       ',');
  if (ch.size() != 3) throw IoError("net.channels wants three comma-separated counts");
  for (int i = 0; i < 3; ++i) c.channels[i] = std::stoi(trim(ch[i]));
  c.input_side = r.integer("net.input_side", def.input_side);
  c.roialign_out = r.integer("net.roialign_out", def.roialign_out);
  c.fc_dim = r.integer("net.fc_dim", def.fc_dim);
  c.branch_mid = r.integer("net.branch_mid", def.branch_mid);
  c.dropout = r.real("net.dropout", def.dropout);
  return c;
}

TrainConfig resolve_train(Resolver& r) {
  TrainConfig d, c;
  c.lr_branch = r.real("train.lr_branch", d.lr_branch);
  c.lr_fc = r.real("train.lr_fc", d.lr_fc);
  c.lr_backbone = r.real("train.lr_backbone", d.lr_backbone);
  c.lr_agg = r.real("train.lr_agg", d.lr_agg);
  c.momentum = r.real("train.momentum", d.momentum);
  c.weight_decay = r.real("train.weight_decay", d.weight_decay);
  c.grad_clip = r.real("train.grad_clip", d.grad_clip);
  c.iters = r.integer("train.iters", d.iters);
  c.epoch_scale = r.real("train.epoch_scale", d.epoch_scale);
  c.frames_per_batch = r.integer("train.frames_per_batch", d.frames_per_batch);
  c.pos_per_frame = r.integer("train.pos_per_frame", d.pos_per_frame);
  c.neg_per_frame = r.integer("train.neg_per_frame", d.neg_per_frame);
  c.pos_iou = r.real("train.pos_iou", d.pos_iou);
  c.neg_iou = r.real("train.neg_iou", d.neg_iou);
  c.mining_attempts = r.integer("train.mining_attempts", d.mining_attempts);
  c.embed_weight = r.real("train.embed_weight", d.embed_weight);
  c.log_csv = r.str("train.log_csv", d.log_csv);
  c.seed = r.u64("seed", 0);
  return c;
}

TrackerConfig resolve_track(Resolver& r) {
  TrackerConfig d, c;
  c.init_pos = r.integer("track.init_pos", d.init_pos);
  c.init_neg = r.integer("track.init_neg", d.init_neg);
  c.init_epochs = r.integer("track.init_epochs", d.init_epochs);
  c.init_lr_fc6 = r.real("track.init_lr_fc6", d.init_lr_fc6);
  c.init_lr_fc45 = r.real("track.init_lr_fc45", d.init_lr_fc45);
  c.regress_boxes = r.integer("track.regress_boxes", d.regress_boxes);
  c.regress_iou = r.real("track.regress_iou", d.regress_iou);
  c.ridge_lambda = r.real("track.ridge_lambda", d.ridge_lambda);
  c.candidates = r.integer("track.candidates", d.candidates);
  c.trans_sigma = r.real("track.trans_sigma", d.trans_sigma);
  c.scale_sigma = r.real("track.scale_sigma", d.scale_sigma);
  c.score_threshold = r.real("track.score_threshold", d.score_threshold);
  c.update_pos = r.integer("track.update_pos", d.update_pos);
  c.update_neg = r.integer("track.update_neg", d.update_neg);
  c.longterm_interval = r.integer("track.longterm_interval", d.longterm_interval);
  c.shortterm_frames = r.integer("track.shortterm_frames", d.shortterm_frames);
  c.update_lr_fc6 = r.real("track.update_lr_fc6", d.update_lr_fc6);
  c.update_lr_fc45 = r.real("track.update_lr_fc45", d.update_lr_fc45);
  c.update_epochs = r.integer("track.update_epochs", d.update_epochs);
  c.pos_capacity = r.integer("track.pos_capacity", d.pos_capacity);
  c.neg_capacity = r.integer("track.neg_capacity", d.neg_capacity);
  c.batch_pos = r.integer("track.batch_pos", d.batch_pos);
  c.batch_neg = r.integer("track.batch_neg", d.batch_neg);
  c.momentum = r.real("track.momentum", d.momentum);
  c.weight_decay = r.real("track.weight_decay", d.weight_decay);
  c.grad_clip = r.real("track.grad_clip", d.grad_clip);
  c.pos_iou = r.real("track.pos_iou", d.pos_iou);
  c.neg_iou = r.real("track.neg_iou", d.neg_iou);
  c.mining_attempts = r.integer("track.mining_attempts", d.mining_attempts);
  c.seed = r.u64("seed", 0);
  return c;
}

VariantFlags resolve_variant(Resolver& r, const std::string& variant) {
  VariantFlags f;
  f.mode = parse_variant(variant);
  std::string layers = r.str("variant.layers", "123");
  f.active_layers = {false, false, false};
  for (char ch : layers) {
    if (ch < '1' || ch > '3')
      throw IoError("variant.layers wants a subset of \"123\", got '" + layers + "'");
    f.active_layers[ch - '1'] = true;
  }
  return f;
}

std::vector<Sequence> load_dataset(const std::string& dir) {
  std::vector<std::string> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "gt_rgb.txt"))
      subdirs.push_back(e.path().string());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw IoError("no sequence directories under " + dir);
  std::vector<Sequence> out;
  for (const std::string& s : subdirs) out.push_back(load_sequence(s));
  return out;
}

// "variant,seqdir,results" triples from repeated --run flags
std::vector<EvalRun> load_runs(const std::vector<std::string>& run_specs) {
  std::vector<EvalRun> runs;
  for (const std::string& spec : run_specs) {
    auto parts = split_char(spec, ',');
    if (parts.size() != 3)
      throw IoError("--run wants variant,seqdir,results, got '" + spec + "'");
    Sequence seq = load_sequence(trim(parts[1]));
    TrackResult tr = load_results(trim(parts[2]));
    if (static_cast<int>(tr.boxes.size()) != seq.length)
      throw IoError("results " + parts[2] + " has " + std::to_string(tr.boxes.size()) +
                    " frames, sequence has " + std::to_string(seq.length));
    EvalRun r;
    r.variant = trim(parts[0]);
    r.sequence = trim(parts[1]);
    r.pred = tr.boxes;
    r.gt_rgb = seq.gt_rgb;
    r.gt_t = seq.gt_t;
    r.tags = seq.challenges;
    runs.push_back(std::move(r));
  }
  return runs;
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config, "flat key = value configuration file");
  cmd->add_option("--set", cf.sets, "override any config key, e.g. --set train.iters=50")
      ->take_all();
  cmd->add_option("--seed", cf.seed, "RNG seed (overrides the config key `seed`)")
      ->each([&cf](const std::string&) { cf.seed_given = true; });
  cmd->add_option("--workers", cf.workers,
                  "worker count (reserved; the current implementation is sequential)");
}

Resolver make_resolver(CommonFlags& cf) {
  return Resolver(cf.config, cf.sets, cf.seed_given ? &cf.seed : nullptr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"challenge-aware RGBT tracker"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "render a synthetic RGBT sequence");
  std::string gen_spec, gen_out;
  CommonFlags gen_cf;
  gen->add_option("--spec", gen_spec, "sequence spec file")->required();
  gen->add_option("--out", gen_out, "output sequence directory")->required();
  add_common(gen, gen_cf);

  // train
  auto* tr = app.add_subcommand("train", "offline three-stage training");
  std::string tr_data, tr_out, tr_init, tr_stage = "all";
  CommonFlags tr_cf;
  tr->add_option("--data", tr_data, "dataset directory of sequence subdirectories")
      ->required();
  tr->add_option("--stage", tr_stage, "1, 2, 3 or all")
      ->check(CLI::IsMember({"1", "2", "3", "all"}));
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--init", tr_init, "checkpoint to initialize from");
  add_common(tr, tr_cf);

  // track
  auto* tk = app.add_subcommand("track", "run the online tracker over a sequence");
  std::string tk_ckpt, tk_seq, tk_out, tk_variant = "full";
  CommonFlags tk_cf;
  tk->add_option("--ckpt", tk_ckpt, "model checkpoint")->required();
  tk->add_option("--seq", tk_seq, "sequence directory")->required();
  tk->add_option("--out", tk_out, "results file (x,y,w,h,score per frame)")->required();
  tk->add_option("--variant", tk_variant,
                 "full, no_gate, direct_add, no_guidance, film or baseline");
  add_common(tk, tk_cf);

  // eval
  auto* ev = app.add_subcommand("eval", "metrics report over tracked runs");
  std::vector<std::string> ev_runs;
  std::string ev_out = ".";
  CommonFlags ev_cf;
  ev->add_option("--run", ev_runs, "repeatable variant,seqdir,results triple")
      ->required()
      ->take_all();
  ev->add_option("--out", ev_out, "report directory");
  add_common(ev, ev_cf);

  // dump-activations
  auto* da = app.add_subcommand("dump-activations", "feature heat maps for one frame");
  std::string da_ckpt, da_seq, da_out, da_variant = "full";
  int da_frame = 0;
  CommonFlags da_cf;
  da->add_option("--ckpt", da_ckpt, "model checkpoint")->required();
  da->add_option("--seq", da_seq, "sequence directory")->required();
  da->add_option("--frame", da_frame, "frame index");
  da->add_option("--out", da_out, "output directory for PGM heat maps")->required();
  da->add_option("--variant", da_variant, "variant mode for the forward pass");
  add_common(da, da_cf);

  // plot
  auto* pl = app.add_subcommand("plot", "precision/success SVG plots for tracked runs");
  std::vector<std::string> pl_runs;
  std::string pl_out = ".";
  CommonFlags pl_cf;
  pl->add_option("--run", pl_runs, "repeatable variant,seqdir,results triple")
      ->required()
      ->take_all();
  pl->add_option("--out", pl_out, "plot directory");
  add_common(pl, pl_cf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      Resolver r = make_resolver(gen_cf);
      SequenceSpec spec = SequenceSpec::load(gen_spec);
      if (gen_cf.seed_given) spec.seed = gen_cf.seed;
      spec.seed = r.u64("seed", spec.seed);
      r.print("generate");
      generate(spec, gen_out);
      std::cerr << "wrote " << spec.length << " frames to " << gen_out << "\n";
    } else if (*tr) {
      Resolver r = make_resolver(tr_cf);
      NetConfig net = resolve_net(r);
      TrainConfig cfg = resolve_train(r);
      r.print("train");
      std::vector<Sequence> seqs = load_dataset(tr_data);
      std::cerr << "dataset: " << seqs.size() << " sequences\n";
      CatModel<float> model(net, cfg.seed, static_cast<int>(seqs.size()));
      if (!tr_init.empty()) model.load(tr_init);
      auto run = [&](int stage) {
        StageStats st = stage == 1   ? train_stage1(seqs, model, cfg)
                        : stage == 2 ? train_stage2(seqs, model, cfg)
                                     : train_stage3(seqs, model, cfg);
        std::cerr << "stage " << stage << ": " << st.losses.size() << " iterations, last loss "
                  << (st.losses.empty() ? 0.0 : st.losses.back()) << "\n";
      };
      if (tr_stage == "all")
        for (int s = 1; s <= 3; ++s) run(s);
      else
        run(std::stoi(tr_stage));
      model.save(tr_out);
      std::cerr << "wrote checkpoint " << tr_out << "\n";
    } else if (*tk) {
      Resolver r = make_resolver(tk_cf);
      NetConfig net = resolve_net(r);
      TrackerConfig cfg = resolve_track(r);
      VariantFlags flags = resolve_variant(r, tk_variant);
      r.print("track");
      Sequence seq = load_sequence(tk_seq);
      CatModel<float> model(net, cfg.seed, 1);
      model.load(tk_ckpt);
      double fps = 0;
      TrackResult res = track_sequence(model, seq, cfg, flags, &fps);
      save_results(tk_out, res);
      std::cerr << "tracked " << seq.length << " frames (variant " << tk_variant << ") at "
                << fps << " fps -> " << tk_out << "\n";
    } else if (*ev || *pl) {
      bool plots_only = static_cast<bool>(*pl);
      CommonFlags& cf = plots_only ? pl_cf : ev_cf;
      Resolver r = make_resolver(cf);
      r.print(plots_only ? "plot" : "eval");
      const std::string& out = plots_only ? pl_out : ev_out;
      write_report(load_runs(plots_only ? pl_runs : ev_runs), out);
      if (plots_only) {
        fs::remove(out + "/report.csv");
        std::cerr << "wrote " << out << "/pr.svg and " << out << "/sr.svg\n";
      } else {
        std::cerr << "wrote " << out << "/report.csv, pr.svg, sr.svg\n";
      }
    } else if (*da) {
      Resolver r = make_resolver(da_cf);
      NetConfig net = resolve_net(r);
      VariantFlags flags = resolve_variant(r, da_variant);
      std::uint64_t seed = r.u64("seed", 0);
      r.print("dump-activations");
      Sequence seq = load_sequence(da_seq);
      if (da_frame < 0 || da_frame >= seq.length)
        throw IoError("frame " + std::to_string(da_frame) + " outside [0," +
                      std::to_string(seq.length) + ")");
      CatModel<float> model(net, seed, 1);
      model.load(da_ckpt);
      FramePair fp = seq.frame(da_frame);
      PatchPair pp = make_patch(fp, fp.gt_rgb, net.input_side);
      Tensor<float> rgb({3, net.input_side, net.input_side}, pp.rgb.data);
      Tensor<float> t({3, net.input_side, net.input_side}, pp.thermal.data);
      auto written = dump_activations(model, rgb, t, flags, da_out);
      std::cerr << "wrote " << written.size() << " heat maps to " << da_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "catrack: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
