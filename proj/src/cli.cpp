#include "zoomshot/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <Eigen/SVD>
#include <json.hpp>

#include "zoomshot/ablation.hpp"
#include "zoomshot/binary_io.hpp"
#include "zoomshot/digest.hpp"
#include "zoomshot/gradcheck.hpp"
#include "zoomshot/synthworld.hpp"
#include "zoomshot/trainer.hpp"
#include "zoomshot/zeroshot.hpp"

namespace zoomshot {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Usage:
      return kExitConfig;
    case ErrorKind::Io:
      return kExitIo;
    default:
      return kExitData;
  }
}

namespace {

// Every run records what it read and wrote; CSV outputs carry the digest of
// this record on their first line.
class Manifest {
 public:
  explicit Manifest(const std::string& subcommand) { doc_["subcommand"] = subcommand; }
  ordered_json& config() { return doc_["config"]; }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const fs::path& p) { doc_["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}}); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  std::string text() const { return doc_.dump(2) + "\n"; }
  std::string digest() const { return sha256_hex(text()); }
  void write(const fs::path& p) const { write_text(p, text()); }

  static void write_text(const fs::path& p, const std::string& text) {
    binio::write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                       text.size()));
  }

 private:
  ordered_json doc_ = ordered_json::object();
};

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

unsigned eval_threads() {
  const char* env = std::getenv("ZOOMSHOT_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 0) throw ConfigError("ZOOMSHOT_THREADS must be a non-negative integer, got '" +
                                               std::string(env) + "'");
  return static_cast<unsigned>(v);
}

// Flags shared by train and ablate.
struct TrainFlags {
  std::string student_imgs, teacher_imgs, teacher_prompts;
  std::string losses = "mse,cc,pgkd";
  std::string pgkd_metric = "lm";
  std::string variance_ratio = "corrected";
  std::string init = "uniform";
  double lr = 1e-4;
  std::size_t epochs = 1;
  std::size_t batch = 256;
  double var_target = 4.5;
  double data_fraction = 1.0;
  std::uint64_t seed = 0;
  bool affine = false;
  double kd_temp = 20.0;
  double logit_scale = 1.0;
  bool pgkd_on_logits = false;
  bool kd_t2 = false;

  void add(CLI::App* app, bool with_losses) {
    app->add_option("--student-imgs", student_imgs, "Student image embeddings (ZSEB)")->required();
    app->add_option("--teacher-imgs", teacher_imgs, "Teacher image embeddings, same images in the same order")
        ->required();
    app->add_option("--teacher-prompts", teacher_prompts,
                    "Teacher text embeddings of the training prompts (needed for cc and pgkd)");
    if (with_losses) app->add_option("--losses", losses, "Comma list from mse,cc,pgkd or 'all'");
    app->add_option("--pgkd-metric", pgkd_metric, "Distillation metric: lm|htce");
    app->add_option("--lr", lr, "Initial learning rate (cosine schedule per step)");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--var-target", var_target, "Target latent variance");
    app->add_option("--data-fraction", data_fraction, "Fraction of the paired images used, in (0, 1]");
    app->add_option("--seed", seed, "Seed for init, subsampling and shuffling");
    app->add_flag("--affine", affine, "Learn bias vectors in both maps");
    app->add_option("--variance-ratio", variance_ratio, "corrected: sqrt(target/var); literal: sqrt(var/target)");
    app->add_option("--kd-temp", kd_temp, "Temperature of the high-temperature CE metric");
    app->add_option("--logit-scale", logit_scale, "Multiplier on cosine similarities before softmax");
    app->add_option("--init", init, "Map initialization: uniform|identity");
    app->add_flag("--pgkd-on-logits", pgkd_on_logits, "Logit matching on scaled cosines instead of probabilities");
    app->add_flag("--kd-t2", kd_t2, "Multiply the high-temperature CE term by T^2");
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.lr0 = lr;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.target_variance = var_target;
    cfg.data_fraction = data_fraction;
    cfg.seed = seed;
    cfg.affine = affine;
    cfg.variance_ratio = parse_variance_ratio(variance_ratio);
    cfg.init = parse_init_scheme(init);
    cfg.loss = LossConfig::from_list(losses);
    cfg.loss.pgkd_metric = parse_pgkd_metric(pgkd_metric);
    cfg.loss.kd_temperature = kd_temp;
    cfg.loss.logit_scale = logit_scale;
    cfg.loss.pgkd_on_probabilities = !pgkd_on_logits;
    cfg.loss.kd_t2_correction = kd_t2;
    cfg.validate();
    return cfg;
  }
};

struct TrainingData {
  EmbeddingSet student, teacher;
  std::optional<PromptBank> prompts;
};

TrainingData load_training_data(const TrainFlags& f, bool prompts_needed, Manifest& manifest) {
  if (prompts_needed && f.teacher_prompts.empty())
    throw ConfigError("--teacher-prompts is required when cc or pgkd is enabled");
  TrainingData data;
  data.student = read_embedding_file(f.student_imgs);
  manifest.input(f.student_imgs);
  data.teacher = read_embedding_file(f.teacher_imgs);
  manifest.input(f.teacher_imgs);
  if (!f.teacher_prompts.empty()) {
    data.prompts = PromptBank{read_embedding_file(f.teacher_prompts), f.teacher_prompts};
    manifest.input(f.teacher_prompts);
  }
  return data;
}

struct ClassFlags {
  std::string class_templates;
  std::vector<std::string> class_embeddings;

  void add(CLI::App* app) {
    app->add_option("--class-templates", class_templates, "Class-template file (count, names, templates)")
        ->required();
    app->add_option("--class-embeddings", class_embeddings,
                    "Directory of template_NNN.zseb files, or one file per template in template order")
        ->required();
  }

  Matrix load(Manifest& manifest) const {
    std::vector<fs::path> sources(class_embeddings.begin(), class_embeddings.end());
    const ClassPromptSet cp = load_class_prompt_set(class_templates, sources);
    manifest.input(class_templates);
    if (sources.size() == 1 && fs::is_directory(sources[0])) {
      for (std::size_t k = 0; k < cp.templates.size(); ++k) manifest.input(template_embedding_path(sources[0], k));
    } else {
      for (const auto& p : sources) manifest.input(p);
    }
    return zoomshot::class_embeddings(cp);
  }
};

void require_labels(const EmbeddingSet& set, const std::string& path) {
  if (!set.has_labels()) throw ValidationError(path + ": evaluation embeddings carry no labels");
}

int cmd_train(const TrainFlags& f, const std::string& out_path, std::ostream& out) {
  const TrainConfig cfg = f.config();
  Manifest manifest("train");
  manifest.config() = ordered_json::parse(config_digest(cfg));
  manifest.seed(cfg.seed);
  const TrainingData data = load_training_data(f, cfg.loss.needs_prompts(), manifest);

  const TrainResult result = train(data.student, data.teacher, data.prompts ? &*data.prompts : nullptr, cfg);

  const fs::path model_path = out_path;
  const fs::path report_path = with_suffix(model_path, ".report.csv");
  const fs::path manifest_path = with_suffix(model_path, ".manifest.json");
  manifest.output(model_path);
  manifest.output(report_path);
  save_model(result.maps, result.scales, config_digest(cfg), model_path);
  Manifest::write_text(report_path, "# manifest=" + manifest.digest() + " param_sha256=" +
                                        result.report.param_checksum + "\n" + result.report.to_csv());
  manifest.write(manifest_path);

  const StepRecord& last = result.report.steps.back();
  out << "steps=" << result.report.steps.size() << " final_loss=" << format_double(last.total)
      << " param_sha256=" << result.report.param_checksum << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& imgs_path, const ClassFlags& classes,
             const std::string& direction, const std::string& out_path, std::ostream& out) {
  if (direction != "forward" && direction != "inverse")
    throw ConfigError("--direction must be forward|inverse, got '" + direction + "'");
  Manifest manifest("eval");
  manifest.config() = {{"direction", direction}};
  const Model model = load_model(model_path);
  manifest.input(model_path);
  const EmbeddingSet imgs = read_embedding_file(imgs_path);
  manifest.input(imgs_path);
  require_labels(imgs, imgs_path);
  const Matrix class_emb = classes.load(manifest);

  EvalOptions opts;
  opts.threads = eval_threads();
  const EvalResult result = direction == "forward" ? eval_forward(model.maps, model.scales, imgs, class_emb, opts)
                                                   : eval_inverse(model.maps, model.scales, imgs, class_emb, opts);
  if (!out_path.empty()) {
    manifest.output(out_path);
    std::vector<std::string> names = imgs.class_names;
    if (names.empty()) names = read_class_templates(classes.class_templates).class_names;
    Manifest::write_text(out_path, "# manifest=" + manifest.digest() + " top1=" +
                                       format_double(result.top1_accuracy) + "\n" + result.to_csv(names));
    manifest.write(with_suffix(out_path, ".manifest.json"));
  }
  out << "top1=" << format_double(result.top1_accuracy) << "\n";
  return kExitOk;
}

int cmd_synth(const WorldSpec& spec, const std::string& dir, std::ostream& out) {
  const World world = generate_world(spec);
  const auto files = write_world(world, dir);
  Manifest manifest("synth");
  manifest.config() = {{"m", spec.m},
                       {"d", spec.d},
                       {"n_train", spec.n_train},
                       {"n_eval", spec.n_eval},
                       {"classes", spec.classes},
                       {"noise_sigma", spec.noise_sigma},
                       {"gap_offset", spec.gap_offset},
                       {"condition_bound", spec.condition_bound},
                       {"n_prompts", spec.n_prompts},
                       {"n_templates", spec.n_templates}};
  manifest.seed(spec.seed);
  for (const auto& f : files) manifest.output(f);
  manifest.write(fs::path(dir) / "manifest.json");
  for (const auto& f : files) out << f.string() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opts, const std::string& out_path, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(opts);
  for (const auto& e : report.entries)
    out << "check=" << e.check << " seeds=" << e.seeds << " max_rel_err=" << format_double(e.max_rel_error)
        << " worst_seed=" << e.worst_seed << " " << (e.passed ? "pass" : "FAIL") << "\n";
  out << "ops=";
  for (std::size_t i = 0; i < report.ops_covered.size(); ++i) out << (i ? "," : "") << report.ops_covered[i];
  out << "\n" << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  if (!out_path.empty()) {
    Manifest manifest("gradcheck");
    manifest.config() = {{"seeds", opts.seeds},
                         {"step", opts.step},
                         {"tolerance", opts.tolerance},
                         {"kink_margin", opts.kink_margin},
                         {"flip_matmul_backward", opts.faults.flip_matmul_backward}};
    manifest.seed(opts.base_seed);
    manifest.output(out_path);
    Manifest::write_text(out_path, "# manifest=" + manifest.digest() + "\n" + report.to_csv());
    manifest.write(with_suffix(out_path, ".manifest.json"));
  }
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const std::vector<std::uint8_t> bytes = binio::read_file(path);
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  out << "file=" << path << "\nsha256=" << sha256_hex(bytes) << "\n";
  if (magic == kEmbeddingMagic) {
    const EmbeddingSet set = decode_embedding(bytes);
    out << "format=ZSEB\nmodality=" << to_string(set.modality) << "\nencoder=" << set.encoder_name
        << "\nn=" << set.size() << "\ndim=" << set.dim() << "\nlabels=" << (set.has_labels() ? "yes" : "no")
        << "\nclasses=" << set.class_names.size() << "\nvariance=" << format_double(compute_variance(set)) << "\n";
  } else if (magic == kModelMagic) {
    const Model model = decode_model(bytes);
    out << "format=ZSLM\nm=" << model.maps.m() << "\nd=" << model.maps.d()
        << "\naffine=" << (model.maps.affine() ? "yes" : "no")
        << "\nscale_student=" << format_double(model.scales.student)
        << "\nscale_teacher_img=" << format_double(model.scales.teacher_img)
        << "\nscale_teacher_txt=" << format_double(model.scales.teacher_txt)
        << "\ntarget_variance=" << format_double(model.scales.target_variance)
        << "\nparam_sha256=" << parameter_checksum(model.maps) << "\nconfig=" << model.config_digest << "\n";
  } else if (magic == kGroundTruthMagic) {
    const Matrix a = decode_ground_truth(bytes);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    out << "format=ZSGT\nd=" << a.rows() << "\nm=" << a.cols()
        << "\ncondition=" << format_double(s(0) / s(s.size() - 1)) << "\n";
  } else {
    throw ParseError(ParseFault::BadMagic, 0, "not a ZSEB, ZSLM or ZSGT file");
  }
  return kExitOk;
}

int cmd_ablate(const TrainFlags& f, const std::string& eval_imgs, const ClassFlags& classes,
               const std::string& out_path, std::ostream& out) {
  TrainConfig cfg = f.config();
  Manifest manifest("ablate");
  manifest.config() = ordered_json::parse(config_digest(cfg));
  manifest.seed(cfg.seed);
  const TrainingData data = load_training_data(f, true, manifest);
  const EmbeddingSet eval_set = read_embedding_file(eval_imgs);
  manifest.input(eval_imgs);
  require_labels(eval_set, eval_imgs);
  const Matrix class_emb = classes.load(manifest);

  EvalOptions opts;
  opts.threads = eval_threads();
  AblationInputs in{&data.student, &data.teacher, &*data.prompts, &eval_set, &class_emb};
  const auto rows = run_ablation(in, cfg, opts);
  if (!out_path.empty()) manifest.output(out_path);
  const std::string csv = "# manifest=" + manifest.digest() + "\n" + ablation_csv(rows);
  if (!out_path.empty()) {
    Manifest::write_text(out_path, csv);
    manifest.write(with_suffix(out_path, ".manifest.json"));
  }
  out << csv;
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aligns a student image encoder with a teacher vision-language space through linear maps"};
  app.name("zoomshot");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainFlags train_flags;
  std::string train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the forward and inverse maps");
  train_flags.add(train_cmd, true);
  train_cmd->add_option("--out", train_out, "Model path; report and manifest are written beside it")->required();

  std::string eval_model, eval_imgs, eval_direction = "forward", eval_out;
  ClassFlags eval_classes;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Zero-shot top-1 accuracy of a trained model");
  eval_cmd->add_option("--model", eval_model, "Model file (ZSLM)")->required();
  eval_cmd->add_option("--imgs", eval_imgs, "Labeled student image embeddings")->required();
  eval_classes.add(eval_cmd);
  eval_cmd->add_option("--direction", eval_direction, "forward: h(image) vs text; inverse: image vs h_inv(text)");
  eval_cmd->add_option("--out", eval_out, "Per-class CSV output");

  WorldSpec spec;
  std::string synth_dir;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic world with a planted linear map");
  synth_cmd->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--m", spec.m, "Student dimension");
  synth_cmd->add_option("--d", spec.d, "Teacher dimension");
  synth_cmd->add_option("--n-train", spec.n_train, "Training images");
  synth_cmd->add_option("--n-eval", spec.n_eval, "Evaluation images");
  synth_cmd->add_option("--classes", spec.classes, "Class count");
  synth_cmd->add_option("--noise", spec.noise_sigma, "Image noise standard deviation");
  synth_cmd->add_option("--gap", spec.gap_offset, "Modality gap offset length");
  synth_cmd->add_option("--condition", spec.condition_bound, "Condition number of the planted map");
  synth_cmd->add_option("--prompts", spec.n_prompts, "Training prompts");
  synth_cmd->add_option("--templates", spec.n_templates, "Templates per class");
  synth_cmd->add_option("--seed", spec.seed, "World seed");

  GradcheckOptions gc;
  std::string gc_out;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc_cmd->add_option("--seeds", gc.seeds, "Random points per check");
  gc_cmd->add_option("--seed", gc.base_seed, "First seed");
  gc_cmd->add_option("--step", gc.step, "Finite-difference step");
  gc_cmd->add_option("--tolerance", gc.tolerance, "Largest accepted relative error");
  gc_cmd->add_option("--out", gc_out, "CSV output");
  gc_cmd->add_flag("--inject-matmul-fault", gc.faults.flip_matmul_backward)->group("");

  std::string inspect_path;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "Summarize a ZSEB, ZSLM or ZSGT file");
  inspect_cmd->add_option("file", inspect_path, "File to summarize")->required();

  TrainFlags ablate_flags;
  std::string ablate_eval, ablate_out;
  ClassFlags ablate_classes;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate all seven loss combinations");
  ablate_flags.add(ablate_cmd, false);
  ablate_cmd->add_option("--eval-imgs", ablate_eval, "Labeled student image embeddings")->required();
  ablate_classes.add(ablate_cmd);
  ablate_cmd->add_option("--out", ablate_out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, train_out, out);
    if (*eval_cmd) return cmd_eval(eval_model, eval_imgs, eval_classes, eval_direction, eval_out, out);
    if (*synth_cmd) return cmd_synth(spec, synth_dir, out);
    if (*gc_cmd) return cmd_gradcheck(gc, gc_out, out);
    if (*inspect_cmd) return cmd_inspect(inspect_path, out);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, ablate_eval, ablate_classes, ablate_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace zoomshot
