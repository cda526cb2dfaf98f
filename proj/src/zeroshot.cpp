#include "zoomshot/zeroshot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "zoomshot/errors.hpp"

namespace zoomshot {

namespace {
constexpr std::string_view kPlaceholder = "{}";

std::string trim_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }
}  // namespace

std::string ClassTemplates::render(std::size_t template_index, std::size_t class_index) const {
  std::string out = templates.at(template_index);
  const auto pos = out.find(kPlaceholder);
  out.replace(pos, kPlaceholder.size(), class_names.at(class_index));
  return out;
}

ClassTemplates parse_class_templates(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      out = trim_cr(out);
      if (!blank(out)) return true;
    }
    return false;
  };

  if (!next_line(line)) throw ValidationError("class-template file is empty");
  std::size_t count = 0;
  try {
    std::size_t used = 0;
    const long long parsed = std::stoll(line, &used);
    if (parsed < 1 || line.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    count = static_cast<std::size_t>(parsed);
  } catch (const std::exception&) {
    throw ValidationError("class-template file line " + std::to_string(line_no) +
                          ": expected a positive class count, got '" + line + "'");
  }

  ClassTemplates ct;
  for (std::size_t c = 0; c < count; ++c) {
    if (!next_line(line))
      throw ValidationError("class-template file ends after " + std::to_string(c) + " of " +
                            std::to_string(count) + " class names");
    ct.class_names.push_back(line);
  }
  std::vector<std::string> sorted = ct.class_names;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("class-template file has duplicate class names");
  while (next_line(line)) {
    const auto first = line.find(kPlaceholder);
    if (first == std::string::npos || line.find(kPlaceholder, first + 1) != std::string::npos)
      throw ValidationError("class-template file line " + std::to_string(line_no) +
                            ": template needs exactly one {} placeholder");
    ct.templates.push_back(line);
  }
  if (ct.templates.empty()) throw ValidationError("class-template file has no templates");
  return ct;
}

ClassTemplates read_class_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class-template file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_class_templates(ss.str());
}

std::string format_class_templates(const ClassTemplates& ct) {
  std::string out = std::to_string(ct.class_names.size()) + "\n";
  for (const auto& name : ct.class_names) out += name + "\n";
  for (const auto& t : ct.templates) out += t + "\n";
  return out;
}

void ClassPromptSet::validate() const {
  if (class_names.empty()) throw ValidationError("class prompt set has no classes");
  if (teacher_text_by_template.empty()) throw ValidationError("class prompt set has no templates");
  if (teacher_text_by_template.size() != templates.size())
    throw ValidationError(std::to_string(templates.size()) + " templates but " +
                          std::to_string(teacher_text_by_template.size()) + " embedding sets");
  const std::size_t dim = teacher_text_by_template.front().dim();
  for (std::size_t k = 0; k < teacher_text_by_template.size(); ++k) {
    const EmbeddingSet& set = teacher_text_by_template[k];
    if (set.size() != class_names.size())
      throw ValidationError("template " + std::to_string(k) + " has " + std::to_string(set.size()) +
                            " class embeddings, expected " + std::to_string(class_names.size()));
    if (set.dim() != dim) throw ShapeError("template embeddings disagree on dimension");
    if (!set.class_names.empty() && set.class_names != class_names)
      throw ValidationError("template " + std::to_string(k) + " class names differ from the template file");
  }
}

std::filesystem::path template_embedding_path(const std::filesystem::path& dir, std::size_t k) {
  char name[32];
  std::snprintf(name, sizeof(name), "template_%03zu.zseb", k);
  return dir / name;
}

ClassPromptSet load_class_prompt_set(const std::filesystem::path& template_file,
                                     const std::vector<std::filesystem::path>& sources) {
  const ClassTemplates ct = read_class_templates(template_file);
  ClassPromptSet cp;
  cp.class_names = ct.class_names;
  cp.templates = ct.templates;
  std::vector<std::filesystem::path> files;
  if (sources.size() == 1 && std::filesystem::is_directory(sources.front())) {
    for (std::size_t k = 0; k < ct.templates.size(); ++k)
      files.push_back(template_embedding_path(sources.front(), k));
  } else {
    files = sources;
  }
  if (files.size() != ct.templates.size())
    throw ValidationError(std::to_string(ct.templates.size()) + " templates but " +
                          std::to_string(files.size()) + " class embedding files");
  for (const auto& f : files) {
    EmbeddingSet set = read_embedding_file(f);
    if (set.modality != Modality::Text)
      throw ValidationError("class embedding file is not text modality: " + f.string());
    cp.teacher_text_by_template.push_back(std::move(set));
  }
  cp.validate();
  return cp;
}

Matrix class_embeddings(const ClassPromptSet& cp, bool renormalize) {
  cp.validate();
  const auto c = static_cast<Eigen::Index>(cp.class_count());
  const auto d = static_cast<Eigen::Index>(cp.teacher_text_by_template.front().dim());
  Matrix acc = Matrix::Zero(c, d);
  for (const EmbeddingSet& set : cp.teacher_text_by_template) {
    const Matrix emb = set.to_double();
    for (Eigen::Index i = 0; i < c; ++i) {
      const double norm = emb.row(i).norm();
      if (!(norm > 0.0))
        throw DegenerateError("zero-norm embedding for class " + cp.class_names[static_cast<std::size_t>(i)],
                              static_cast<std::size_t>(i));
      acc.row(i) += emb.row(i) / norm;
    }
  }
  acc /= static_cast<double>(cp.teacher_text_by_template.size());
  for (Eigen::Index i = 0; i < c; ++i) {
    const double norm = acc.row(i).norm();
    if (!(norm > 1e-12))
      throw DegenerateError("template average vanishes for class " +
                                cp.class_names[static_cast<std::size_t>(i)],
                            static_cast<std::size_t>(i));
    if (renormalize) acc.row(i) /= norm;
  }
  return acc;
}

std::uint64_t EvalResult::total(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::uint64_t v : confusion[c]) t += v;
  return t;
}

std::string EvalResult::to_csv(const std::vector<std::string>& class_names) const {
  std::ostringstream out;
  out << "class,correct,total\n";
  for (std::size_t c = 0; c < confusion.size(); ++c) {
    std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    if (name.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : name) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      name = quoted + "\"";
    }
    out << name << ',' << correct(c) << ',' << total(c) << '\n';
  }
  return out.str();
}

EvalResult classify(const Matrix& features, const Matrix& classes,
                    const std::vector<std::uint32_t>& labels, const EvalOptions& opts) {
  if (features.cols() != classes.cols())
    throw ShapeError("features have dim " + std::to_string(features.cols()) +
                     " but class embeddings have dim " + std::to_string(classes.cols()));
  if (labels.size() != static_cast<std::size_t>(features.rows()))
    throw ValidationError("label count differs from feature count");
  const auto c = static_cast<std::size_t>(classes.rows());
  if (c == 0) throw ValidationError("no classes to classify against");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= c)
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " exceeds the " + std::to_string(c) + " evaluated classes");

  Matrix unit_classes = classes;
  for (Eigen::Index j = 0; j < unit_classes.rows(); ++j) {
    const double norm = unit_classes.row(j).norm();
    if (!(norm > 0.0)) throw DegenerateError("zero-norm class embedding " + std::to_string(j), j);
    unit_classes.row(j) /= norm;
  }

  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i)
    if (!(features.row(static_cast<Eigen::Index>(i)).norm() > 0.0))
      throw DegenerateError("zero-norm feature row " + std::to_string(i), i);

  EvalResult result;
  result.predictions.assign(n, 0);
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = features.row(static_cast<Eigen::Index>(i));
      const double norm = row.norm();
      std::uint32_t best = 0;
      double best_score = -2.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double score = row.dot(unit_classes.row(static_cast<Eigen::Index>(j))) / norm;
        if (score > best_score) {
          best_score = score;
          best = static_cast<std::uint32_t>(j);
        }
      }
      result.predictions[i] = best;
    }
  };

  unsigned threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(n, t * chunk);
      const std::size_t end = std::min(n, begin + chunk);
      pool.emplace_back(worker, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  result.confusion.assign(c, std::vector<std::uint64_t>(c, 0));
  for (std::size_t i = 0; i < n; ++i) ++result.confusion[labels[i]][result.predictions[i]];
  std::uint64_t hits = 0;
  result.per_class_accuracy.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    hits += result.confusion[k][k];
    const std::uint64_t t = result.total(k);
    result.per_class_accuracy[k] = t == 0 ? 0.0 : static_cast<double>(result.confusion[k][k]) / static_cast<double>(t);
  }
  result.n_evaluated = n;
  result.top1_accuracy = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  return result;
}

namespace {

const std::vector<std::uint32_t>& require_labels(const EmbeddingSet& set) {
  if (!set.labels) throw UsageError("evaluation needs labeled embeddings");
  return *set.labels;
}

}  // namespace

EvalResult eval_forward(const LinearMapPair& maps, const ModelScales& scales,
                        const EmbeddingSet& student_imgs, const Matrix& class_emb,
                        const EvalOptions& opts) {
  const auto& labels = require_labels(student_imgs);
  if (static_cast<Eigen::Index>(student_imgs.dim()) != maps.m())
    throw ShapeError("model expects student dim " + std::to_string(maps.m()) + ", embeddings have " +
                     std::to_string(student_imgs.dim()));
  if (class_emb.cols() != maps.d())
    throw ShapeError("model expects teacher dim " + std::to_string(maps.d()) +
                     ", class embeddings have " + std::to_string(class_emb.cols()));
  const Matrix mapped = maps.forward(student_imgs.to_double() * scales.student);
  return classify(mapped, class_emb * scales.teacher_txt, labels, opts);
}

EvalResult eval_inverse(const LinearMapPair& maps, const ModelScales& scales,
                        const EmbeddingSet& student_imgs, const Matrix& class_emb,
                        const EvalOptions& opts) {
  const auto& labels = require_labels(student_imgs);
  if (static_cast<Eigen::Index>(student_imgs.dim()) != maps.m())
    throw ShapeError("model expects student dim " + std::to_string(maps.m()) + ", embeddings have " +
                     std::to_string(student_imgs.dim()));
  if (class_emb.cols() != maps.d())
    throw ShapeError("model expects teacher dim " + std::to_string(maps.d()) +
                     ", class embeddings have " + std::to_string(class_emb.cols()));
  const Matrix mapped_classes = maps.inverse(class_emb * scales.teacher_txt);
  return classify(student_imgs.to_double() * scales.student, mapped_classes, labels, opts);
}

}  // namespace zoomshot
