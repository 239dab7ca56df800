#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "schemadapt/bench.hpp"
#include "schemadapt/config.hpp"
#include "schemadapt/encoder.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/metrics.hpp"
#include "schemadapt/mgda.hpp"
#include "schemadapt/objectives.hpp"

namespace py = pybind11;
using namespace schemadapt;

namespace {

py::object json_to_py(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

const ColumnSpec& column(const SchemaDescriptor& s, const std::string& name) {
  const auto i = s.index_of(name);
  if (!i) throw ValidationError("no column '" + name + "' in schema");
  return s.columns[*i];
}

std::unique_ptr<EmbeddingProvider> provider_for(const std::string& kind, std::uint64_t seed, std::size_t dim) {
  ProviderConfig p;
  p.kind = kind;
  p.seed = seed;
  p.dimension = dim;
  return make_provider(p);
}

}  // namespace

PYBIND11_MODULE(_schemadapt, m) {
  m.doc() = "Core bindings: schema parsing, semantic encoding, metrics, MGDA and the synthetic benchmark";

  static py::exception<Error> base(m, "SchemadaptError");
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("normalize_value", &normalize_value, py::arg("v"), py::arg("mean"), py::arg("range"));

  m.def(
      "build_statement",
      [](const std::string& schema_json, const std::string& column_name, const std::string& display) {
        const auto s = parse_schema(schema_json, {.require_numeric_stats = false});
        return build_statement(column(s, column_name), display);
      },
      py::arg("schema_json"), py::arg("column"), py::arg("display"));

  m.def(
      "encode",
      [](const std::string& schema_json, const std::string& csv_text, const std::string& provider,
         std::uint64_t seed, std::size_t dimension, const std::string& tokenization) {
        const auto s = parse_schema(schema_json);
        const auto data = parse_dataset(csv_text, s);
        auto p = provider_for(provider, seed, dimension);
        const auto mode = parse_tokenization_mode(tokenization);
        py::list rows;
        for (const Row& r : data.rows) {
          const auto toks = tokenize_row(r, s, *p, mode);
          py::list texts;
          ad::Matrix raw(static_cast<ad::Index>(toks.size()), static_cast<ad::Index>(p->dimension()));
          for (std::size_t i = 0; i < toks.size(); ++i) {
            texts.append(toks[i].text);
            for (std::size_t k = 0; k < p->dimension(); ++k) raw(static_cast<ad::Index>(i), static_cast<ad::Index>(k)) = toks[i].raw_embedding[k];
          }
          py::dict d;
          d["subject_id"] = r.subject_id;
          d["statements"] = texts;
          d["tokens"] = raw;
          rows.append(d);
        }
        return rows;
      },
      py::arg("schema_json"), py::arg("csv_text"), py::arg("provider") = "offline", py::arg("seed") = 7,
      py::arg("dimension") = 64, py::arg("tokenization") = "semantic",
      "Per row: subject id, statement texts and the raw (pre-projection) token matrix.");

  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return auroc(scores, labels); },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "metric_report",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> probs,
         py::array_t<int, py::array::c_style | py::array::forcecast> labels, std::vector<std::string> names,
         double threshold) {
        if (probs.ndim() != 2 || labels.ndim() != 2 || probs.shape(0) != labels.shape(0) ||
            probs.shape(1) != labels.shape(1)) {
          throw ValidationError("metric_report: probabilities and labels must be matching N x L arrays");
        }
        const auto L = static_cast<std::size_t>(probs.shape(1));
        std::vector<LabelValue> y(static_cast<std::size_t>(labels.size()));
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<LabelValue>(labels.data()[i]);
        if (names.empty()) {
          for (std::size_t k = 0; k < L; ++k) names.push_back("label" + std::to_string(k));
        }
        const auto r = metric_report(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())),
                                     y, L, names, threshold);
        return json_to_py(r.to_json());
      },
      py::arg("probabilities"), py::arg("labels"), py::arg("names") = std::vector<std::string>{},
      py::arg("threshold") = 0.5);

  m.def(
      "focal_loss", [](double p, int y, double alpha, double gamma) { return focal_loss(p, y, alpha, gamma); },
      py::arg("p"), py::arg("y"), py::arg("alpha") = 1.0, py::arg("gamma") = 2.0);

  m.def(
      "mgda_solve",
      [](const mgda::Matrix& G, int max_iters, double tol) {
        mgda::SolveOptions o;
        o.max_iters = max_iters;
        o.tol = tol;
        const auto sol = mgda::min_norm_solve(G, o);
        py::dict d;
        d["alpha"] = sol.alpha;
        d["norm_sq"] = sol.norm_sq;
        d["kkt_violation"] = mgda::kkt_violation(G, sol.alpha);
        d["combined"] = Eigen::RowVectorXd(mgda::combine(G, sol.alpha));
        return d;
      },
      py::arg("gradients"), py::arg("max_iters") = 100, py::arg("tol") = 1e-6,
      "Min-norm convex combination of the rows of a T x D gradient matrix.");

  m.def(
      "two_task_alpha",
      [](const std::vector<double>& g1, const std::vector<double>& g2) { return mgda::two_task_alpha(g1, g2); },
      py::arg("g1"), py::arg("g2"));

  m.def(
      "synth_gen",
      [](const std::string& out, std::uint64_t seed, std::size_t n_source, std::size_t n_target,
         std::size_t n_features, std::size_t labels, const std::string& paraphrase) {
        bench::GeneratorConfig g;
        g.seed = seed;
        g.n_source = n_source;
        g.n_target = n_target;
        g.n_features = n_features;
        g.num_labels = labels;
        g.paraphrase = bench::parse_paraphrase(paraphrase);
        const auto pair = bench::generate_pair(g);
        bench::write_pair(pair, out);
        return bench::bayes_probe(pair.source_z, pair.source).macro_auroc;
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("n_source") = 4000, py::arg("n_target") = 1000,
      py::arg("n_features") = 24, py::arg("labels") = 6, py::arg("paraphrase") = "light",
      "Writes a source/target pair; returns the latent-feature probe macro AUROC.");

  m.def(
      "desk_config", [](std::size_t num_labels) { return json_to_py(to_json(bench::desk_run_config(num_labels)).dump()); },
      py::arg("num_labels") = 6);
}
