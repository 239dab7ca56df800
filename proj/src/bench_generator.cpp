#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <unordered_map>

#include "schemadapt/bench.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"

namespace schemadapt::bench {

namespace {

enum class Kind { num, cat2, cat3 };

enum class Displays { no_yes, male_female, low_high, none_severe, independence, allele_count };

struct Concept {
  const char* a_name;
  const char* b_name;
  const char* description;
  Kind a;
  Kind b;
  Displays displays;
  double loc;
  double scale;
  double b_factor;  // unit change in schema B
  double b_offset;
};

// Every sixth entry or so switches kind between the two schemas.
constexpr Concept kConcepts[] = {
    {"AGE", "PTAGE", "Age of the subject at the visit in years:", Kind::num, Kind::num, Displays::low_high, 74, 8, 1, 0},
    {"SEX", "PTGENDER", "Gender of the subject:", Kind::cat2, Kind::cat2, Displays::male_female, 0, 1, 1, 0},
    {"EDUC", "PTEDUCAT", "Years of formal education completed:", Kind::num, Kind::num, Displays::low_high, 15, 3, 1, 0},
    {"MMSE_TOTAL", "MMSCORE", "Mini mental state examination total score:", Kind::num, Kind::num, Displays::low_high, 26, 3, 1, 0},
    {"HIS_SEIZURES", "MHSEIZ", "History of seizures:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"BMI", "VSBMI", "Body mass index of the subject:", Kind::num, Kind::cat3, Displays::low_high, 27, 4, 1, 0},
    {"CDR_SUM", "CDRSB", "Clinical dementia rating sum of boxes:", Kind::num, Kind::num, Displays::low_high, 2, 1.5, 1, 0},
    {"HEARING", "MHHEAR", "Hearing impairment reported by the clinician:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"MOCA_TOTAL", "MOCA", "Montreal cognitive assessment total score:", Kind::num, Kind::num, Displays::low_high, 23, 4, 1, 0},
    {"SYSBP", "VSBPSYS", "Systolic blood pressure in mercury millimeters:", Kind::num, Kind::num, Displays::low_high, 135, 15, 0.1333, 0},
    {"GAIT_DISTURB", "NPIGAIT", "Gait disturbance observed on examination:", Kind::cat3, Kind::cat3, Displays::none_severe, 0, 1, 1, 0},
    {"LOGIMEM", "LDELTOTAL", "Logical memory delayed recall score:", Kind::num, Kind::cat3, Displays::low_high, 9, 4, 1, 0},
    {"GDS_TOTAL", "GDTOTAL", "Geriatric depression scale total score:", Kind::num, Kind::num, Displays::low_high, 3, 2, 1, 0},
    {"SLEEP_APNEA", "MHSLEEP", "Sleep apnea diagnosis on record:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"FAQ", "FAQTOTAL", "Functional activities questionnaire total score:", Kind::num, Kind::num, Displays::low_high, 6, 5, 1, 0},
    {"TRAILB", "TRABSCOR", "Trail making test part B completion time in seconds:", Kind::num, Kind::num, Displays::low_high, 110, 40, 0.01667, 0},
    {"HALLUC", "NPIHALL", "Visual hallucinations severity:", Kind::cat2, Kind::num, Displays::no_yes, 1, 1, 1, 0},
    {"HEARTDIS", "MHCARD", "History of cardiovascular disease:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"DIABETES", "MHENDO", "Diabetes mellitus diagnosis:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"SMOKYRS", "SMOKEDUR", "Years of tobacco smoking:", Kind::num, Kind::num, Displays::low_high, 12, 10, 1, 0},
    {"ANIMALS", "CATANIMSC", "Animal naming fluency score:", Kind::num, Kind::num, Displays::low_high, 18, 5, 1, 0},
    {"BOSTON", "BNTTOTAL", "Boston naming test total correct:", Kind::num, Kind::num, Displays::low_high, 25, 4, 1, 0},
    {"HIPPOVOL", "HIPPOCAMPUS", "Hippocampal volume measured on imaging:", Kind::num, Kind::num, Displays::low_high, 3.4, 0.5, 1000, 0},
    {"DIGIT_SPAN", "DSPANFOR", "Digit span forward test score:", Kind::num, Kind::cat3, Displays::low_high, 8, 2, 1, 0},
    {"APOE4", "APOE4CNT", "Number of APOE e4 alleles carried:", Kind::cat3, Kind::cat3, Displays::allele_count, 0, 1, 1, 0},
    {"TREMOR", "NPITREM", "Resting tremor present on examination:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"ANXIETY", "NPIANX", "Anxiety symptoms severity level:", Kind::cat3, Kind::cat3, Displays::none_severe, 0, 1, 1, 0},
    {"CHOLESTEROL", "LBCHOL", "Total serum cholesterol level:", Kind::num, Kind::num, Displays::low_high, 200, 35, 0.02586, 0},
    {"STROKE_HX", "MHSTROKE", "History of stroke:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"INDEP", "RESIDENCE", "Level of independence in daily living:", Kind::cat3, Kind::num, Displays::independence, 1, 1, 1, 0},
    {"ALCOHOL", "MHALC", "Alcohol use disorder history:", Kind::cat2, Kind::cat2, Displays::no_yes, 0, 1, 1, 0},
    {"WEIGHT", "VSWEIGHT", "Body weight of the subject in kilograms:", Kind::num, Kind::num, Displays::low_high, 75, 14, 2.2046, 0},
};
constexpr std::size_t kConceptCount = sizeof(kConcepts) / sizeof(kConcepts[0]);

std::vector<std::string> display_set(Displays d, Kind kind) {
  if (kind == Kind::cat2) {
    switch (d) {
      case Displays::male_female: return {"Male", "Female"};
      case Displays::low_high: return {"Low", "High"};
      default: return {"No", "Yes"};
    }
  }
  switch (d) {
    case Displays::none_severe: return {"None", "Mild", "Severe"};
    case Displays::independence: return {"Independent", "Needs some help", "Dependent"};
    case Displays::allele_count: return {"Zero", "One", "Two"};
    default: return {"Low", "Moderate", "High"};
  }
}

// Word-level synonym table; keys are lower case.
const std::unordered_map<std::string, std::string>& synonyms() {
  static const std::unordered_map<std::string, std::string> table = {
      {"age", "years"},         {"subject", "participant"}, {"visit", "assessment"},   {"years", "yrs"},
      {"formal", "academic"},   {"education", "schooling"},  {"completed", "finished"}, {"mini", "brief"},
      {"mental", "cognitive"},  {"state", "status"},         {"examination", "exam"},   {"total", "overall"},
      {"score", "result"},      {"gender", "sex"},           {"history", "record"},     {"seizures", "convulsions"},
      {"body", "physical"},     {"mass", "weight"},          {"index", "ratio"},        {"clinical", "medical"},
      {"dementia", "memory"},   {"rating", "grade"},         {"sum", "aggregate"},      {"boxes", "domains"},
      {"hearing", "auditory"},  {"impairment", "deficit"},   {"reported", "noted"},     {"clinician", "physician"},
      {"montreal", "moca"},     {"cognitive", "thinking"},   {"assessment", "evaluation"}, {"systolic", "upper"},
      {"blood", "arterial"},    {"pressure", "tension"},     {"mercury", "hg"},         {"millimeters", "mm"},
      {"gait", "walking"},      {"disturbance", "abnormality"}, {"observed", "seen"},   {"logical", "story"},
      {"memory", "recall"},     {"delayed", "late"},         {"recall", "retrieval"},   {"geriatric", "elderly"},
      {"depression", "mood"},   {"scale", "inventory"},      {"sleep", "nocturnal"},    {"apnea", "hypopnea"},
      {"diagnosis", "diagnosed"}, {"record", "file"},        {"functional", "everyday"}, {"activities", "tasks"},
      {"questionnaire", "survey"}, {"trail", "path"},        {"making", "drawing"},     {"test", "task"},
      {"part", "section"},      {"completion", "finishing"}, {"time", "duration"},      {"seconds", "secs"},
      {"visual", "seeing"},     {"hallucinations", "misperceptions"}, {"severity", "intensity"},
      {"cardiovascular", "cardiac"}, {"disease", "illness"}, {"diabetes", "glycemic"},  {"mellitus", "disorder"},
      {"tobacco", "cigarette"}, {"smoking", "use"},          {"animal", "creature"},    {"naming", "listing"},
      {"fluency", "speed"},     {"boston", "picture"},       {"correct", "right"},      {"hippocampal", "hippocampus"},
      {"volume", "size"},       {"measured", "quantified"},  {"imaging", "scans"},      {"digit", "number"},
      {"span", "range"},        {"forward", "ahead"},        {"alleles", "copies"},     {"carried", "present"},
      {"resting", "rest"},      {"tremor", "shaking"},       {"present", "found"},      {"anxiety", "worry"},
      {"symptoms", "signs"},    {"level", "degree"},         {"serum", "plasma"},       {"cholesterol", "lipid"},
      {"stroke", "infarct"},    {"independence", "autonomy"}, {"daily", "everyday"},    {"living", "life"},
      {"alcohol", "ethanol"},   {"disorder", "problem"},     {"weight", "mass"},        {"kilograms", "kg"},
      {"number", "count"},
  };
  return table;
}

const std::unordered_map<std::string, std::string>& display_synonyms() {
  static const std::unordered_map<std::string, std::string> table = {
      {"No", "Absent"},       {"Yes", "Present"},     {"Male", "Man"},          {"Female", "Woman"},
      {"Low", "Reduced"},     {"Moderate", "Intermediate"}, {"High", "Elevated"}, {"None", "Not present"},
      {"Mild", "Slight"},     {"Severe", "Marked"},   {"Independent", "Self-sufficient"},
      {"Needs some help", "Partly assisted"}, {"Dependent", "Fully assisted"},
      {"Zero", "No copies"},  {"One", "Single copy"}, {"Two", "Double copy"},
  };
  return table;
}

std::string substitute_word(const std::string& word, bool& replaced) {
  std::size_t end = word.size();
  while (end > 0 && !std::isalnum(static_cast<unsigned char>(word[end - 1]))) --end;
  std::string core = word.substr(0, end);
  std::string lower = core;
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto it = synonyms().find(lower);
  if (it == synonyms().end()) return word;
  std::string out = it->second;
  if (!core.empty() && std::isupper(static_cast<unsigned char>(core[0]))) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  replaced = true;
  return out + word.substr(end);
}

double solve_bias(double sigma, double prevalence) {
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw ValidationError("generate_pair: prevalence " + std::to_string(prevalence) + " is not in (0, 1)");
  }
  // E[sigmoid(s + b)], s ~ N(0, sigma^2), by grid quadrature.
  constexpr int kPoints = 4001;
  auto mean_at = [&](double b) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < kPoints; ++i) {
      const double u = -8.0 + 16.0 * i / (kPoints - 1);
      const double w = std::exp(-0.5 * u * u);
      num += w / (1.0 + std::exp(-(sigma * u + b)));
      den += w;
    }
    return num / den;
  };
  double lo = -60.0, hi = 60.0;
  if (mean_at(lo) > prevalence || mean_at(hi) < prevalence) {
    throw ValidationError("generate_pair: prevalence " + std::to_string(prevalence) + " is infeasible");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_at(mid) < prevalence ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string fmt_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
  return buf;
}

const char* const kLabelNames[] = {"AD", "LBD", "VD", "FTD", "PSY", "SEF"};

struct SchemaSide {
  bool target;
  Paraphrase paraphrase;
};

ColumnSpec column_for(const Concept& c, const SchemaSide& side) {
  ColumnSpec spec;
  spec.name = side.target ? c.b_name : c.a_name;
  spec.refined_description = side.target ? paraphrase_text(c.description, side.paraphrase) : c.description;
  const Kind kind = side.target ? c.b : c.a;
  if (kind == Kind::num) {
    spec.kind = ColumnKind::numerical;
    return spec;
  }
  spec.kind = ColumnKind::categorical;
  const auto displays = display_set(c.displays, kind);
  for (std::size_t i = 0; i < displays.size(); ++i) {
    std::string display = displays[i];
    if (side.target && side.paraphrase == Paraphrase::heavy) display = display_synonyms().at(display);
    spec.vocabulary.push_back({std::to_string(side.target ? i + 1 : i), display});
  }
  return spec;
}

Cell cell_for(const Concept& c, bool target, double x) {
  const Kind kind = target ? c.b : c.a;
  if (kind == Kind::num) {
    const double f = target ? c.b_factor : 1.0;
    const double off = target ? c.b_offset : 0.0;
    return Cell::of_number(round3(f * (c.loc + c.scale * x) + off));
  }
  if (kind == Kind::cat2) {
    const double t = target ? 0.2 : 0.0;
    return Cell::of_category(x > t ? 1 : 0);
  }
  const double lo = target ? -0.4 : -0.6;
  const double hi = target ? 0.8 : 0.6;
  return Cell::of_category(x <= lo ? 0 : x <= hi ? 1 : 2);
}

DatasetMatrix make_dataset(const GeneratorConfig& cfg, const LatentSpec& latent, bool target, std::size_t n_rows,
                           ad::Matrix& z_out) {
  const std::size_t F = cfg.n_features;
  const std::size_t L = cfg.num_labels;
  DatasetMatrix data;
  const SchemaSide side{target, cfg.paraphrase};
  for (std::size_t f = 0; f < F; ++f) data.schema.columns.push_back(column_for(kConcepts[f], side));
  data.schema.subject_id_column = target ? "RID" : "SUBJ_ID";
  for (std::size_t k = 0; k < L; ++k) {
    const std::string base = k < 6 ? kLabelNames[k] : "Y" + std::to_string(k);
    data.schema.label_columns.push_back(target ? "DX_" + base : base);
  }

  std::mt19937_64 rng(sub_seed(cfg.seed, target ? "target-rows" : "source-rows"));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  z_out.resize(static_cast<ad::Index>(n_rows), static_cast<ad::Index>(F));
  std::size_t subject = 0;
  Eigen::VectorXd z(static_cast<ad::Index>(F));
  while (data.rows.size() < n_rows) {
    for (std::size_t f = 0; f < F; ++f) z(static_cast<ad::Index>(f)) = normal(rng);
    std::vector<LabelValue> labels(L);
    for (std::size_t k = 0; k < L; ++k) {
      const double logit = latent.weights.row(static_cast<ad::Index>(k)).dot(z) + latent.bias[k];
      labels[k] = unif(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
    }
    const std::size_t visits = 1 + static_cast<std::size_t>(rng() % 3);
    const std::string sid = fmt_id(target ? 'R' : 'S', subject++);
    for (std::size_t v = 0; v < visits && data.rows.size() < n_rows; ++v) {
      Row row;
      row.subject_id = sid;
      row.labels = labels;
      for (std::size_t f = 0; f < F; ++f) {
        const double x = z(static_cast<ad::Index>(f)) + cfg.visit_noise * normal(rng);
        const bool missing = unif(rng) < cfg.missing_rate;
        row.cells.push_back(missing ? Cell::absent() : cell_for(kConcepts[f], target, x));
      }
      z_out.row(static_cast<ad::Index>(data.rows.size())) = z.transpose();
      data.rows.push_back(std::move(row));
    }
  }
  std::vector<std::size_t> all(data.rows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  data.schema = compute_numeric_stats(data, all);
  for (auto& col : data.schema.columns) {
    if (col.kind == ColumnKind::numerical) {
      col.mean = round3(*col.mean);
      col.range = round3(*col.range);
    }
  }
  data.validate();
  return data;
}

}  // namespace

Paraphrase parse_paraphrase(std::string_view name) {
  if (name == "identical") return Paraphrase::identical;
  if (name == "light") return Paraphrase::light;
  if (name == "heavy") return Paraphrase::heavy;
  throw ValidationError("paraphrase: expected identical|light|heavy, got '" + std::string(name) + "'");
}

std::string_view to_string(Paraphrase p) {
  switch (p) {
    case Paraphrase::identical: return "identical";
    case Paraphrase::light: return "light";
    case Paraphrase::heavy: return "heavy";
  }
  return "identical";
}

std::string paraphrase_text(std::string_view text, Paraphrase level) {
  if (level == Paraphrase::identical) return std::string(text);
  std::string out;
  std::size_t pos = 0;
  bool done = false;
  while (pos < text.size()) {
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string word(text.substr(pos, end - pos));
    if (!done || level == Paraphrase::heavy) {
      bool replaced = false;
      word = substitute_word(word, replaced);
      if (replaced && level == Paraphrase::light) done = true;
    }
    if (!out.empty()) out += ' ';
    out += word;
    pos = end + 1;
  }
  return out;
}

BenchmarkPair generate_pair(const GeneratorConfig& cfg) {
  if (cfg.n_features < 4) throw ValidationError("generate_pair: n_features must be >= 4");
  if (cfg.n_features > kConceptCount) {
    throw ValidationError("generate_pair: n_features must be <= " + std::to_string(kConceptCount));
  }
  if (cfg.num_labels < 2) throw ValidationError("generate_pair: num_labels must be >= 2");
  if (cfg.n_source < 10 || cfg.n_target < 10) throw ValidationError("generate_pair: need at least 10 rows per side");

  BenchmarkPair pair;
  pair.config = cfg;
  const std::size_t F = cfg.n_features, L = cfg.num_labels;
  static constexpr double kDefaultPrevalence[] = {0.05, 0.35, 0.25, 0.45, 0.2, 0.3};
  auto& lat = pair.latent;
  lat.prevalence = cfg.prevalence;
  if (lat.prevalence.empty()) {
    for (std::size_t k = 0; k < L; ++k) lat.prevalence.push_back(kDefaultPrevalence[k % 6]);
  }
  if (lat.prevalence.size() != L) throw ValidationError("generate_pair: prevalence needs one entry per label");

  std::mt19937_64 rng(sub_seed(cfg.seed, "latent"));
  std::uniform_real_distribution<double> mag(1.5, 2.5);
  lat.weights = ad::Matrix::Zero(static_cast<ad::Index>(L), static_cast<ad::Index>(F));
  std::vector<std::size_t> features(F);
  for (std::size_t f = 0; f < F; ++f) features[f] = f;
  for (std::size_t k = 0; k < L; ++k) {
    std::shuffle(features.begin(), features.end(), rng);
    for (std::size_t i = 0; i < 4; ++i) {
      const double sign = (rng() & 1) ? 1.0 : -1.0;
      lat.weights(static_cast<ad::Index>(k), static_cast<ad::Index>(features[i])) = sign * mag(rng);
    }
    lat.bias.push_back(solve_bias(lat.weights.row(static_cast<ad::Index>(k)).norm(), lat.prevalence[k]));
  }

  pair.source = make_dataset(cfg, lat, false, cfg.n_source, pair.source_z);
  pair.target = make_dataset(cfg, lat, true, cfg.n_target, pair.target_z);
  for (std::size_t f = 0; f < F; ++f) pair.column_map.emplace_back(kConcepts[f].a_name, kConcepts[f].b_name);
  return pair;
}

void write_pair(const BenchmarkPair& pair, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file((dir / "source_schema.json").string(), serialize_schema(pair.source.schema));
  write_text_file((dir / "source.csv").string(), serialize_dataset(pair.source));
  write_text_file((dir / "target_schema.json").string(), serialize_schema(pair.target.schema));
  write_text_file((dir / "target.csv").string(), serialize_dataset(pair.target));
  nlohmann::ordered_json j;
  const auto& c = pair.config;
  j["seed"] = c.seed;
  j["n_source"] = c.n_source;
  j["n_target"] = c.n_target;
  j["n_features"] = c.n_features;
  j["num_labels"] = c.num_labels;
  j["paraphrase"] = std::string(to_string(c.paraphrase));
  j["prevalence"] = pair.latent.prevalence;
  j["bias"] = pair.latent.bias;
  auto& w = j["weights"] = nlohmann::ordered_json::array();
  for (ad::Index k = 0; k < pair.latent.weights.rows(); ++k) {
    std::vector<double> row(pair.latent.weights.row(k).data(),
                            pair.latent.weights.row(k).data() + pair.latent.weights.cols());
    w.push_back(row);
  }
  auto& m = j["columns"] = nlohmann::ordered_json::array();
  for (const auto& [a, b] : pair.column_map) m.push_back({{"source", a}, {"target", b}});
  write_text_file((dir / "latent.json").string(), j.dump(2) + "\n");
}

LoadedPair load_pair(const std::filesystem::path& dir) {
  LoadedPair out;
  const auto src_schema = parse_schema(read_text_file((dir / "source_schema.json").string()));
  out.source = parse_dataset(read_text_file((dir / "source.csv").string()), src_schema);
  const auto tgt_schema = parse_schema(read_text_file((dir / "target_schema.json").string()));
  out.target = parse_dataset(read_text_file((dir / "target.csv").string()), tgt_schema);
  return out;
}

MetricReport bayes_probe(const ad::Matrix& z, const DatasetMatrix& data) {
  const auto n = static_cast<ad::Index>(data.rows.size());
  const auto F = z.cols();
  const std::size_t L = data.schema.num_labels();
  const ad::Index n_train = n * 4 / 5;
  ad::Matrix X(n, F + 1);
  X.leftCols(F) = z;
  X.col(F).setOnes();
  std::vector<double> probs;
  std::vector<LabelValue> labels;
  ad::Matrix P(n - n_train, static_cast<ad::Index>(L));
  for (std::size_t k = 0; k < L; ++k) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(F + 1);
    for (int it = 0; it < 50; ++it) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(F + 1);
      ad::Matrix H = 1e-6 * ad::Matrix::Identity(F + 1, F + 1);
      for (ad::Index i = 0; i < n_train; ++i) {
        const int y = data.rows[static_cast<std::size_t>(i)].labels[k];
        if (y == kMissingLabel) continue;
        const double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(w)));
        grad += (p - y) * X.row(i).transpose();
        H += p * (1 - p) * X.row(i).transpose() * X.row(i);
      }
      grad += 1e-6 * w;
      const Eigen::VectorXd delta = H.ldlt().solve(grad);
      w -= delta;
      if (delta.norm() < 1e-10) break;
    }
    for (ad::Index i = n_train; i < n; ++i) P(i - n_train, static_cast<ad::Index>(k)) = 1.0 / (1.0 + std::exp(-X.row(i).dot(w)));
  }
  for (ad::Index i = n_train; i < n; ++i) {
    for (std::size_t k = 0; k < L; ++k) labels.push_back(data.rows[static_cast<std::size_t>(i)].labels[k]);
  }
  return metric_report({P.data(), static_cast<std::size_t>(P.size())}, labels, L, data.schema.label_columns);
}

}  // namespace schemadapt::bench
