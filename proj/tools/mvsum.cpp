// mvsum: command-line pipeline over the library.
// Data goes to stdout (or --out), diagnostics to stderr.
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvsum/checkpoint.hpp"
#include "mvsum/corpus.hpp"
#include "mvsum/embed.hpp"
#include "mvsum/error.hpp"
#include "mvsum/inference.hpp"
#include "mvsum/pipeline.hpp"
#include "mvsum/rouge.hpp"
#include "mvsum/stagehmm.hpp"
#include "mvsum/topicseg.hpp"
#include "mvsum/trainer.hpp"
#include "mvsum/views.hpp"

namespace fs = std::filesystem;
using namespace mvsum;

namespace {

// Writes to --out when given, stdout otherwise.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_.open(path);
    if (!file_) throw Error("cannot write " + path);
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<corpus::Conversation> read_raw_dialogue(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return {corpus::parse_raw(ss.str(), path.stem().string())};
}

std::vector<corpus::Conversation> ingest_path(const std::string& path) {
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<corpus::Conversation> out;
    for (const auto& f : files) out.push_back(read_raw_dialogue(f).front());
    return out;
  }
  if (fs::path(path).extension() == ".txt") return read_raw_dialogue(path);
  return corpus::read_corpus_file(path);
}

embed::EmbeddingTable read_embeddings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return embed::read_embeddings(in);
}

std::vector<embed::EmbeddingMatrix> sequences_for(const std::vector<corpus::Conversation>& convs,
                                                  const embed::EmbeddingTable& table) {
  std::vector<embed::EmbeddingMatrix> seqs;
  for (const auto& c : convs) {
    auto it = table.find(c.id);
    if (it == table.end()) throw Error("no embeddings for conversation '" + c.id + "'");
    seqs.push_back(it->second);
  }
  return seqs;
}

bool needs_vectors(const std::vector<views::ViewKind>& kinds) {
  return std::any_of(kinds.begin(), kinds.end(),
                     [](views::ViewKind k) { return k == views::ViewKind::topic || k == views::ViewKind::stage; });
}

bool has_kind(const std::vector<views::ViewKind>& kinds, views::ViewKind k) {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

template <typename T>
void override_if(CLI::Option* opt, const T& value, T& target) {
  if (opt->count() > 0) target = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view dialogue summarization pipeline"};
  app.require_subcommand(1);

  std::string out_path;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert SAMSum JSON, canonical JSONL or raw dialogue text to canonical JSONL");
  std::string ingest_in;
  ingest->add_option("--in", ingest_in, "SAMSum .json, .jsonl, a raw .txt dialogue or a directory of .txt files")->required();
  ingest->add_option("--out", out_path, "Output path (default stdout)");

  // stats
  auto* stats = app.add_subcommand("stats", "Per-split corpus statistics as CSV");
  std::vector<std::string> stats_files;
  stats->add_option("files", stats_files, "One corpus file per split; the split is named after the file stem")->required();
  stats->add_option("--out", out_path, "Output path (default stdout)");

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Utterance vectors for a corpus");
  std::string embed_in, embed_mode = "tfidf", embed_vectors, embed_fit;
  std::size_t embed_dim = 64;
  std::uint64_t embed_seed = 1;
  embed_cmd->add_option("--in", embed_in, "Canonical corpus")->required();
  embed_cmd->add_option("--mode", embed_mode, "tfidf or external")->check(CLI::IsMember({"tfidf", "external"}));
  embed_cmd->add_option("--dim", embed_dim, "Projection dimension for tfidf")->check(CLI::Range(8, 4096));
  embed_cmd->add_option("--seed", embed_seed, "Projection seed for tfidf");
  embed_cmd->add_option("--vectors", embed_vectors, "External embedding JSONL (mode external)");
  embed_cmd->add_option("--fit", embed_fit, "Corpus the tfidf statistics are fitted on (default: --in)");
  embed_cmd->add_option("--out", out_path, "Output path (default stdout)");

  // hmm-train
  auto* hmm_cmd = app.add_subcommand("hmm-train", "Fit the left-to-right stage HMM");
  std::string hmm_in, hmm_emb;
  std::size_t hmm_states = 4, hmm_iter = 50, hmm_top = 0;
  double hmm_tol = 1e-4;
  hmm_cmd->add_option("--in", hmm_in, "Canonical corpus")->required();
  hmm_cmd->add_option("--embeddings", hmm_emb, "Embedding JSONL for the corpus")->required();
  hmm_cmd->add_option("--states", hmm_states, "Number of stages")->check(CLI::Range(1, 64));
  hmm_cmd->add_option("--max-iter", hmm_iter, "Maximum Baum-Welch iterations");
  hmm_cmd->add_option("--tol", hmm_tol, "Stop when the log-likelihood gain is below this");
  hmm_cmd->add_option("--top-words", hmm_top, "Print this many frequent words per stage to stderr");
  hmm_cmd->add_option("--out", out_path, "Model JSON path (default stdout)");

  // segment
  auto* seg_cmd = app.add_subcommand("segment", "Topic or stage segmentation as block JSONL");
  std::string seg_in, seg_emb, seg_view = "topic", seg_hmm;
  int seg_window = 4;
  double seg_std = 1.0;
  seg_cmd->add_option("--in", seg_in, "Canonical corpus")->required();
  seg_cmd->add_option("--embeddings", seg_emb, "Embedding JSONL for the corpus")->required();
  seg_cmd->add_option("--view", seg_view, "topic or stage")->check(CLI::IsMember({"topic", "stage"}));
  seg_cmd->add_option("--window", seg_window, "C99 rank window")->check(CLI::Range(2, 1000));
  seg_cmd->add_option("--std-coeff", seg_std, "C99 stopping coefficient");
  seg_cmd->add_option("--hmm", seg_hmm, "Stage HMM JSON (view stage)");
  seg_cmd->add_option("--out", out_path, "Output path (default stdout)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the multi-view summarizer");
  std::string tr_in, tr_emb, tr_hmm, tr_views = "topic,stage", tr_config, tr_ckpt, tr_loss;
  std::size_t tr_vocab = 10000, tr_min_freq = 1, tr_steps = 0, tr_batch = 0, tr_eval = 0;
  double tr_base_lr = 0, tr_aux_lr = 0, tr_std = 1.0;
  std::uint64_t tr_seed = 0;
  int tr_window = 4;
  train_cmd->add_option("--in", tr_in, "Canonical training corpus with summaries")->required();
  train_cmd->add_option("--embeddings", tr_emb, "Embedding JSONL (needed for topic/stage views)");
  train_cmd->add_option("--hmm", tr_hmm, "Stage HMM JSON (needed for the stage view)");
  auto* o_views = train_cmd->add_option("--views", tr_views, "Comma-separated views: global, discrete, topic, stage");
  train_cmd->add_option("--config", tr_config, "Flat key = value config; flags override it");
  train_cmd->add_option("--ckpt", tr_ckpt, "Checkpoint directory")->required();
  train_cmd->add_option("--loss-log", tr_loss, "Loss CSV path");
  train_cmd->add_option("--vocab-size", tr_vocab, "Vocabulary cap including specials");
  train_cmd->add_option("--min-freq", tr_min_freq, "Minimum token count for the vocabulary");
  auto* o_steps = train_cmd->add_option("--max-steps", tr_steps);
  auto* o_batch = train_cmd->add_option("--batch-size", tr_batch);
  auto* o_base = train_cmd->add_option("--base-lr", tr_base_lr);
  auto* o_aux = train_cmd->add_option("--aux-lr", tr_aux_lr);
  auto* o_seed = train_cmd->add_option("--seed", tr_seed);
  auto* o_eval = train_cmd->add_option("--eval-every", tr_eval, "Checkpoint every N steps");
  train_cmd->add_option("--window", tr_window, "C99 rank window")->check(CLI::Range(2, 1000));
  train_cmd->add_option("--std-coeff", tr_std, "C99 stopping coefficient");

  // summarize
  auto* sum_cmd = app.add_subcommand("summarize", "Beam-search summaries as JSONL {id, summary}");
  std::string sm_ckpt, sm_in, sm_emb, sm_hmm;
  std::size_t sm_beam = 4, sm_max_len = 100;
  sum_cmd->add_option("--ckpt", sm_ckpt, "Checkpoint directory")->required();
  sum_cmd->add_option("--in", sm_in, "Canonical corpus")->required();
  sum_cmd->add_option("--embeddings", sm_emb, "Embedding JSONL (needed for topic/stage views)");
  sum_cmd->add_option("--hmm", sm_hmm, "Stage HMM JSON (default: the one recorded at training)");
  sum_cmd->add_option("--beam", sm_beam, "Beam size")->check(CLI::PositiveNumber);
  sum_cmd->add_option("--max-len", sm_max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  sum_cmd->add_option("--out", out_path, "Output path (default stdout)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "ROUGE-1/2/L report as CSV");
  std::string ev_hyp, ev_ref;
  eval_cmd->add_option("--hyp", ev_hyp, "JSONL with id and summary")->required();
  eval_cmd->add_option("--ref", ev_ref, "JSONL with id and summary (a canonical corpus works)")->required();
  eval_cmd->add_option("--out", out_path, "Output path (default stdout)");

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the miniature model");
  std::uint64_t gc_seed = 1;
  double gc_std = 0.5, gc_eps = 1e-5, gc_threshold = 1e-4;
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--init-std", gc_std);
  gc_cmd->add_option("--eps", gc_eps);
  gc_cmd->add_option("--threshold", gc_threshold);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*ingest) {
      const auto convs = ingest_path(ingest_in);
      Output out(out_path);
      corpus::write_jsonl(out.stream(), convs);
      std::cerr << "ingested " << convs.size() << " conversations\n";
    } else if (*stats) {
      std::vector<std::pair<std::string, std::vector<corpus::Conversation>>> splits;
      for (const auto& f : stats_files) splits.emplace_back(fs::path(f).stem().string(), corpus::read_corpus_file(f));
      Output out(out_path);
      corpus::write_stats_csv(out.stream(), corpus::corpus_stats(splits));
    } else if (*embed_cmd) {
      const auto convs = corpus::read_corpus_file(embed_in);
      embed::EmbeddingTable table;
      if (embed_mode == "external") {
        if (embed_vectors.empty()) throw CLI::RequiredError("--vectors (mode external)");
        table = embed::load_external(embed_vectors, convs);
      } else {
        const auto fit = embed_fit.empty() ? convs : corpus::read_corpus_file(embed_fit);
        table = embed::embed_corpus(embed::fit_tfidf(fit, embed_dim, embed_seed), convs);
      }
      Output out(out_path);
      embed::write_embeddings(out.stream(), table);
    } else if (*hmm_cmd) {
      const auto convs = corpus::read_corpus_file(hmm_in);
      const auto table = read_embeddings_file(hmm_emb);
      embed::validate(table, convs);
      const auto seqs = sequences_for(convs, table);
      const auto fit = stage::em_fit(stage::initial_model(hmm_states, seqs), seqs, {hmm_iter, hmm_tol});
      for (std::size_t i = 0; i < fit.loglik.size(); ++i) std::cerr << "iter " << i << " loglik " << fit.loglik[i] << '\n';
      std::cerr << (fit.converged ? "converged" : "stopped") << " after " << fit.iterations << " iterations\n";
      if (hmm_top > 0) {
        const auto words = stage::top_words(fit.model, convs, table, hmm_top);
        for (std::size_t k = 0; k < words.size(); ++k) {
          std::cerr << "stage " << k + 1 << ':';
          for (const auto& w : words[k]) std::cerr << ' ' << w;
          std::cerr << '\n';
        }
      }
      Output out(out_path);
      stage::save_model(out.stream(), fit.model);
    } else if (*seg_cmd) {
      const auto convs = corpus::read_corpus_file(seg_in);
      const auto table = read_embeddings_file(seg_emb);
      embed::validate(table, convs);
      std::optional<stage::HmmModel> hmm;
      if (seg_view == "stage") {
        if (seg_hmm.empty()) throw CLI::RequiredError("--hmm (view stage)");
        hmm = stage::load_model_file(seg_hmm);
      }
      const topicseg::C99Config c99{seg_window, seg_std, 0};
      Output out(out_path);
      for (const auto& c : convs) {
        const auto& e = table.at(c.id);
        const auto seg = seg_view == "topic" ? topicseg::topic_view(c, e, c99) : stage::stage_view(c, e, *hmm);
        out.stream() << views::blocks_json_line(c.id, views::parse_view_kind(seg_view), seg) << '\n';
      }
    } else if (*train_cmd) {
      const auto convs = corpus::read_corpus_file(tr_in);
      if (convs.empty()) throw Error("train: empty dataset");
      trainer::TrainConfig tc;
      model::ModelConfig mc;
      if (!tr_config.empty()) trainer::apply_config(trainer::parse_key_values_file(tr_config), tc, mc);
      if (o_views->count() > 0 || tr_config.empty()) mc.views = views::parse_view_list(tr_views);
      override_if(o_steps, tr_steps, tc.max_steps);
      override_if(o_batch, tr_batch, tc.batch_size);
      override_if(o_base, tr_base_lr, tc.base_lr);
      override_if(o_aux, tr_aux_lr, tc.aux_lr);
      override_if(o_eval, tr_eval, tc.eval_every);
      if (o_seed->count() > 0) tc.seed = mc.seed = tr_seed;

      const auto vocab = corpus::build_vocab(convs, tr_vocab, tr_min_freq);
      mc.vocab_size = vocab.size();
      pipeline::Segmenters seg;
      std::map<std::string, std::string> meta{{"window", std::to_string(tr_window)},
                                              {"std_coeff", std::to_string(tr_std)}};
      embed::EmbeddingTable table;
      if (needs_vectors(mc.views)) {
        if (tr_emb.empty()) throw CLI::RequiredError("--embeddings (topic/stage views)");
        table = read_embeddings_file(tr_emb);
        embed::validate(table, convs);
      }
      if (has_kind(mc.views, views::ViewKind::topic)) seg.c99 = topicseg::C99Config{tr_window, tr_std, 0};
      if (has_kind(mc.views, views::ViewKind::stage)) {
        if (tr_hmm.empty()) throw CLI::RequiredError("--hmm (stage view)");
        seg.hmm = stage::load_model_file(tr_hmm);
        meta["hmm"] = fs::absolute(tr_hmm).string();
      }
      const auto examples = trainer::make_examples(convs, mc.views, table, seg, vocab, mc);
      model::MultiViewModel<float> m(mc);
      std::cerr << "training on " << examples.size() << " pairs, vocabulary " << vocab.size() << ", "
                << m.params().size() << " tensors\n";
      const auto t0 = std::chrono::steady_clock::now();
      const auto curve = trainer::train<float>(m, examples, tc, [&](const trainer::StepRecord& r) {
        if (r.step % 10 == 0 || r.step == 1)
          std::cerr << "step " << r.step << " loss " << r.loss << " grad_norm " << r.grad_norm << '\n';
        if (tc.eval_every > 0 && r.step % tc.eval_every == 0) checkpoint::save(tr_ckpt, m, vocab, meta);
        return true;
      });
      checkpoint::save(tr_ckpt, m, vocab, meta);
      if (!tr_loss.empty()) {
        std::ofstream lf(tr_loss);
        trainer::write_loss_csv(lf, curve);
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "done: " << curve.size() << " steps in " << secs << " s, final loss " << curve.back().loss << '\n';
    } else if (*sum_cmd) {
      const auto ck = checkpoint::load(sm_ckpt);
      const auto& kinds = ck.model->config().views;
      const auto convs = corpus::read_corpus_file(sm_in);
      embed::EmbeddingTable table;
      if (needs_vectors(kinds)) {
        if (sm_emb.empty()) throw CLI::RequiredError("--embeddings (topic/stage views)");
        table = read_embeddings_file(sm_emb);
        embed::validate(table, convs);
      }
      pipeline::Segmenters seg;
      if (has_kind(kinds, views::ViewKind::topic)) {
        const auto get = [&](const char* key, const char* fallback) {
          auto it = ck.metadata.find(key);
          return it == ck.metadata.end() ? std::string(fallback) : it->second;
        };
        seg.c99 = topicseg::C99Config{std::stoi(get("window", "4")), std::stod(get("std_coeff", "1.0")), 0};
      }
      if (has_kind(kinds, views::ViewKind::stage)) {
        std::string path = sm_hmm;
        if (path.empty() && ck.metadata.count("hmm")) path = ck.metadata.at("hmm");
        if (path.empty()) throw Error("stage view requires --hmm");
        seg.hmm = stage::load_model_file(path);
      }
      inference::BeamOptions bo;
      bo.beam = sm_beam;
      bo.max_len = sm_max_len;
      Output out(out_path);
      for (const auto& c : convs) {
        auto it = table.find(c.id);
        const auto s = inference::summarize(c, *ck.model, ck.vocab, it == table.end() ? nullptr : &it->second, seg, bo);
        out.stream() << nlohmann::json{{"id", c.id}, {"summary", s.text}}.dump() << '\n';
      }
    } else if (*eval_cmd) {
      const auto hyps = rouge::read_summaries_file(ev_hyp);
      const auto refs = rouge::read_summaries_file(ev_ref);
      const auto report = rouge::evaluate_corpus(hyps, refs);
      Output out(out_path);
      rouge::write_report_csv(out.stream(), report);
    } else if (*gc_cmd) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = model::miniature_grad_check(gc_seed, gc_std, gc_eps);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "coordinates " << r.coordinates << " max_rel_error " << r.max_rel_error << " at " << r.worst_param
                << '[' << r.worst_index << "] analytic " << r.analytic << " numeric " << r.numeric << " (" << secs
                << " s)\n";
      return r.max_rel_error < gc_threshold ? 0 : 2;
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: missing option " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
