// Python bindings: corpus I/O, model checkpoints, training and evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slm/checkpoint.hpp"
#include "slm/errors.hpp"
#include "slm/evaluation.hpp"
#include "slm/synthetic.hpp"
#include "slm/training.hpp"

namespace py = pybind11;
using namespace slm;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

EmbeddingMatrix matrix_from_array(const FloatArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dims");
  const auto count = static_cast<std::size_t>(a.shape(0));
  const auto dim = static_cast<std::size_t>(a.shape(1));
  std::vector<float> data(a.data(), a.data() + count * dim);
  return EmbeddingMatrix(count, dim, std::move(data));
}

py::array_t<float> matrix_to_array(const EmbeddingMatrix& m) {
  py::array_t<float> out({m.count(), m.dim()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::vector<float> vector_from_array(const FloatArray& a) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

// Params and their config travel together on the Python side.
struct Model {
  ModelConfig config;
  ModelParams params;

  py::array_t<float> predict(const EmbeddingMatrix& emb, const std::vector<std::vector<SentenceId>>& contexts) const {
    const Matrix<float> h = slm::predict(params, config, emb, contexts);
    py::array_t<float> out({static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols())});
    std::copy(h.data(), h.data() + h.size(), out.mutable_data());
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sentence-level language model over fixed sentence embeddings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
      .def(py::init([](const FloatArray& a) { return matrix_from_array(a); }), py::arg("array"))
      .def_property_readonly("count", &EmbeddingMatrix::count)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def("to_numpy", &matrix_to_array)
      .def("validate", &EmbeddingMatrix::validate)
      .def("__len__", &EmbeddingMatrix::count);
  m.def("read_embeddings", py::overload_cast<const std::string&>(&read_embeddings), py::arg("path"));
  m.def("write_embeddings", &write_embeddings, py::arg("matrix"), py::arg("path"));

  py::class_<CorpusIndex>(m, "CorpusIndex")
      .def(py::init<>())
      .def(py::init([](std::size_t k, std::size_t t, std::vector<std::vector<SentenceId>> stories) {
             return CorpusIndex{k, t, std::move(stories)};
           }),
           py::arg("sentences_per_story"), py::arg("context_len"), py::arg("stories"))
      .def_readwrite("sentences_per_story", &CorpusIndex::sentences_per_story)
      .def_readwrite("context_len", &CorpusIndex::context_len)
      .def_readwrite("stories", &CorpusIndex::stories)
      .def("validate", &CorpusIndex::validate, py::arg("embedding_count") = 0)
      .def("__len__", &CorpusIndex::size);
  m.def("read_corpus_index", &read_corpus_index, py::arg("path"));
  m.def("write_corpus_index", &write_corpus_index, py::arg("index"), py::arg("path"));
  m.def("candidate_pool", py::overload_cast<const CorpusIndex&, std::size_t>(&candidate_pool), py::arg("index"),
        py::arg("position"));

  py::enum_<Arch>(m, "Arch").value("mlp", Arch::mlp).value("resmlp", Arch::resmlp);
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("mlp", &ModelConfig::mlp, py::arg("context_len"), py::arg("dim"))
      .def_static("resmlp", &ModelConfig::resmlp, py::arg("context_len"), py::arg("dim"))
      .def_readwrite("arch", &ModelConfig::arch)
      .def_readwrite("input_dim", &ModelConfig::input_dim)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("num_layers", &ModelConfig::num_layers)
      .def_readwrite("num_residual_blocks", &ModelConfig::num_residual_blocks)
      .def_readwrite("output_dim", &ModelConfig::output_dim)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
      .def("validate", &ModelConfig::validate)
      .def("__eq__", &ModelConfig::operator==);
  m.def("parameter_count", &parameter_count, py::arg("config"));

  py::enum_<DistractorMode>(m, "DistractorMode")
      .value("static", DistractorMode::static_set)
      .value("dynamic", DistractorMode::dynamic);
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("num_distractors", &TrainConfig::num_distractors)
      .def_readwrite("distractor_mode", &TrainConfig::distractor_mode)
      .def_readwrite("cs_loss_weight", &TrainConfig::cs_loss_weight)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
      .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_steps", &TrainConfig::max_steps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("patience", &TrainConfig::patience)
      .def("validate", &TrainConfig::validate)
      .def("format", [](const TrainConfig& c) { return format_train_config(c); });
  m.def("read_train_config", &read_train_config, py::arg("path"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return Model{c, init_params(c, seed)}; }),
           py::arg("config"), py::arg("seed") = 0)
      .def_readonly("config", &Model::config)
      .def("predict", &Model::predict, py::arg("embeddings"), py::arg("contexts"))
      .def("save", [](const Model& mdl, const std::string& path) { save_model(path, mdl.config, mdl.params); },
           py::arg("path"))
      .def("serialize",
           [](const Model& mdl) {
             const auto bytes = serialize_model(mdl.config, mdl.params);
             return py::bytes(bytes.data(), bytes.size());
           })
      .def_property_readonly("parameter_count", [](const Model& mdl) { return mdl.params.parameter_count(); });
  m.def(
      "load_model",
      [](const std::string& path) {
        auto ck = load_model(path);
        return Model{ck.config, std::move(ck.params)};
      },
      py::arg("path"));

  m.def(
      "score_candidates",
      [](const FloatArray& h, const EmbeddingMatrix& pool, const std::vector<SentenceId>& ids) {
        const auto r = score_candidates(vector_from_array(h), pool, ids);
        py::dict d;
        d["ids"] = r.ids;
        d["logits"] = r.logits;
        d["log_partition"] = r.log_partition;
        d["log_probs"] = r.log_probs;
        return d;
      },
      py::arg("h"), py::arg("pool"), py::arg("ids"));

  auto rows_of = [](const EmbeddingMatrix& e, const std::vector<SentenceId>& ids) {
    std::vector<std::span<const float>> out;
    for (auto id : ids) {
      if (id >= e.count()) throw ValidationError("sentence id " + std::to_string(id) + " out of range");
      out.push_back(e.row(id));
    }
    return out;
  };
  m.def(
      "nll_loss",
      [rows_of](const FloatArray& h, const EmbeddingMatrix& e, SentenceId truth, const std::vector<SentenceId>& ds) {
        return nll_loss(vector_from_array(h), rows_of(e, {truth})[0], rows_of(e, ds));
      },
      py::arg("h"), py::arg("embeddings"), py::arg("truth"), py::arg("distractors"));
  m.def(
      "cs_loss",
      [rows_of](const FloatArray& h, const EmbeddingMatrix& e, SentenceId truth, const std::vector<SentenceId>& ctx) {
        return cs_loss(vector_from_array(h), rows_of(e, {truth})[0], rows_of(e, ctx));
      },
      py::arg("h"), py::arg("embeddings"), py::arg("truth"), py::arg("context"));
  m.def(
      "topk_scores",
      [](const FloatArray& h, const EmbeddingMatrix& pool, std::size_t k, std::size_t num_shards) {
        std::vector<std::pair<SentenceId, double>> out;
        for (const auto& s : topk_scores(vector_from_array(h), pool, k, {.num_shards = num_shards})) {
          out.emplace_back(s.id, s.logit);
        }
        return out;
      },
      py::arg("h"), py::arg("pool"), py::arg("k"), py::arg("num_shards") = 1);

  py::class_<LogRecord>(m, "LogRecord")
      .def_readonly("step", &LogRecord::step)
      .def_readonly("loss", &LogRecord::loss)
      .def_readonly("metric_name", &LogRecord::metric_name)
      .def_readonly("metric_value", &LogRecord::metric_value);
  m.def(
      "train",
      [](const EmbeddingMatrix& emb, const CorpusIndex& corpus, const ModelConfig& mc, const TrainConfig& tc) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(emb, corpus, mc, tc);
        }
        py::dict d;
        d["model"] = Model{mc, std::move(r.params)};
        d["log"] = r.log;
        d["step_losses"] = r.step_losses;
        d["steps_run"] = r.steps_run;
        return d;
      },
      py::arg("embeddings"), py::arg("corpus"), py::arg("model_config"), py::arg("train_config"));

  py::class_<ClozeResult>(m, "ClozeResult")
      .def_readonly("accuracy", &ClozeResult::accuracy)
      .def_readonly("correct", &ClozeResult::correct)
      .def_readonly("total", &ClozeResult::total)
      .def_readonly("ties", &ClozeResult::ties);
  py::class_<ClozeEvalSet>(m, "ClozeEvalSet").def("__len__", [](const ClozeEvalSet& s) { return s.items.size(); });
  m.def("read_cloze_set", &read_cloze_set, py::arg("path"));
  m.def(
      "eval_cloze",
      [](const Model& mdl, const EmbeddingMatrix& emb, const ClozeEvalSet& set) {
        return eval_cloze(mdl.params, mdl.config, emb, set);
      },
      py::arg("model"), py::arg("embeddings"), py::arg("cloze_set"));

  py::class_<RankReport>(m, "RankReport")
      .def_readonly("ks", &RankReport::ks)
      .def_readonly("precision_at_k", &RankReport::precision_at_k)
      .def_readonly("mrr", &RankReport::mrr)
      .def_readonly("median_rank", &RankReport::median_rank)
      .def_readonly("mean_rank", &RankReport::mean_rank)
      .def_readonly("pool_size", &RankReport::pool_size)
      .def("precision_at", &RankReport::precision_at, py::arg("k"))
      .def_property_readonly("ranks", [](const RankReport& r) {
        std::vector<std::size_t> ranks;
        for (const auto& q : r.queries) ranks.push_back(q.rank);
        return ranks;
      });
  m.def(
      "eval_ranking",
      [](const Model& mdl, const EmbeddingMatrix& emb, const CorpusIndex& queries, const std::vector<SentenceId>& pool,
         std::vector<std::size_t> ks, std::size_t num_threads) {
        const auto qs = make_queries(queries);
        py::gil_scoped_release release;
        return eval_ranking(mdl.params, mdl.config, emb, qs, pool, std::move(ks), num_threads);
      },
      py::arg("model"), py::arg("embeddings"), py::arg("queries"), py::arg("pool"),
      py::arg("ks") = std::vector<std::size_t>{1, 10}, py::arg("num_threads") = 1);

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("num_stories", &SyntheticConfig::num_stories)
      .def_readwrite("dim", &SyntheticConfig::dim)
      .def_readwrite("sentences_per_story", &SyntheticConfig::sentences_per_story)
      .def_readwrite("context_len", &SyntheticConfig::context_len)
      .def_readwrite("noise_ratio", &SyntheticConfig::noise_ratio)
      .def_readwrite("seed", &SyntheticConfig::seed);
  m.def(
      "make_linear_map_corpus",
      [](const SyntheticConfig& c) {
        auto corpus = make_linear_map_corpus(c);
        return py::make_tuple(std::move(corpus.embeddings), std::move(corpus.index));
      },
      py::arg("config"));
  m.def("split_corpus", &split_corpus, py::arg("index"), py::arg("num_heldout"));
}
