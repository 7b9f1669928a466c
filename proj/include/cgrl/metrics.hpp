#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cgrl/grounding.hpp"
#include "cgrl/region_graph.hpp"

namespace cgrl {

// Token id -> object class id for the object words of the vocabulary.
struct ObjectLexicon {
  std::unordered_map<int, int> token_to_class;

  bool is_object(int token) const { return token_to_class.count(token) > 0; }
  int class_of(int token) const { return token_to_class.at(token); }
};

// Everything the evaluation needs for one scene: the generated caption with
// its attention/localization trace, the gold captions, the gold object set,
// the gold grounded words, and the teacher-forced trace on the gold caption.
struct EvalRecord {
  struct Step {
    int t = 0;
    std::vector<double> region_attention;
    int localized_region = -1;
    std::optional<int> word_class;
  };
  struct GoldObject {
    int cls = 0;
    Box box;
  };

  int scene_id = 0;
  std::vector<int> tokens;                         // generated caption
  std::vector<Step> steps;                         // one per generated token
  std::vector<std::vector<int>> references;        // gold captions, at least one
  std::vector<GoldObject> gold_objects;            // the scene's object set
  std::vector<GroundingAnnotation> gold_grounded;  // gold caption object words
  std::vector<Step> gold_steps;                    // teacher-forced trace on gold caption
  std::vector<Box> region_boxes;                   // proposal boxes of the scene
};

struct MetricsReport {
  double chair_i = 0.0, chair_s = 0.0, recall_o = 0.0;
  std::optional<double> f1_all, f1_loc;  // absent under the w/o-OG ablation
  double grd = 0.0, att = 0.0;
  double bleu1 = 0.0, bleu4 = 0.0, cider = 0.0;
  std::size_t n_records = 0;
  std::size_t n_object_mentions = 0;
  std::size_t n_hallucinated_mentions = 0;
  std::string ablation;  // "full" or the active ablation flag
};

namespace detail {

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline const Box* gold_box_for_class(const EvalRecord& rec, int cls) {
  for (const auto& g : rec.gold_grounded) {
    if (g.cls == cls) return &g.box;
  }
  return nullptr;
}

}  // namespace detail

// CHAIR_i: hallucinated object-word mentions over all object-word mentions.
// CHAIR_s: fraction of records with at least one hallucinated mention.
inline std::pair<double, double> chair(const std::vector<EvalRecord>& records,
                                       const ObjectLexicon& lexicon) {
  if (records.empty()) throw DataError("chair: empty record list");
  std::size_t mentions = 0, hallucinated = 0, bad_records = 0;
  for (const EvalRecord& rec : records) {
    bool any_hallucinated = false;
    std::set<int> gold;
    for (const auto& g : rec.gold_objects) gold.insert(g.cls);
    for (int tok : rec.tokens) {
      if (!lexicon.is_object(tok)) continue;
      ++mentions;
      if (!gold.count(lexicon.class_of(tok))) {
        ++hallucinated;
        any_hallucinated = true;
      }
    }
    if (any_hallucinated) ++bad_records;
  }
  const double chair_i = detail::safe_div(static_cast<double>(hallucinated),
                                          static_cast<double>(mentions));
  const double chair_s = static_cast<double>(bad_records) / static_cast<double>(records.size());
  return {chair_i, chair_s};
}

// Mean over records of |generated classes and gold classes| / |gold classes|;
// records with an empty gold set are skipped.
inline double recall_o(const std::vector<EvalRecord>& records, const ObjectLexicon& lexicon) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const EvalRecord& rec : records) {
    std::set<int> gold;
    for (const auto& g : rec.gold_objects) gold.insert(g.cls);
    if (gold.empty()) continue;
    std::set<int> generated;
    for (int tok : rec.tokens) {
      if (lexicon.is_object(tok)) generated.insert(lexicon.class_of(tok));
    }
    std::size_t hit = 0;
    for (int c : generated)
      if (gold.count(c)) ++hit;
    total += static_cast<double>(hit) / static_cast<double>(gold.size());
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

// Micro-averaged grounding F1 over gold grounded words.
//
// F1_ALL: a gold grounded word scores a true positive when its class was
// generated and some generated mention of the class localized a box with
// IoU over the threshold against the gold box. Precision is over all
// generated object-word mentions, recall over all gold grounded words.
//
// F1_LOC restricts the universe to correctly-generated object words (mentions
// whose class appears among the record's gold grounded words) and scores
// localization alone.
inline std::pair<double, double> grounding_f1(const std::vector<EvalRecord>& records,
                                              const ObjectLexicon& lexicon,
                                              double iou_threshold = 0.5) {
  std::size_t n_generated = 0;       // all generated object-word mentions
  std::size_t n_gold = 0;            // all gold grounded words
  std::size_t tp_all = 0;            // gold words generated and well localized
  std::size_t n_correct_gen = 0;     // generated mentions of gold grounded classes
  std::size_t n_gold_generated = 0;  // gold words whose class was generated
  std::size_t tp_loc = 0;            // of those, well localized
  for (const EvalRecord& rec : records) {
    std::set<int> grounded_classes;
    for (const auto& g : rec.gold_grounded) grounded_classes.insert(g.cls);
    // Per generated mention: class and localized box, if the word is an
    // object word.
    struct Mention {
      int cls;
      const Box* box;
    };
    std::vector<Mention> mentions;
    for (std::size_t k = 0; k < rec.tokens.size(); ++k) {
      if (!lexicon.is_object(rec.tokens[k])) continue;
      ++n_generated;
      const int cls = lexicon.class_of(rec.tokens[k]);
      const Box* picked = nullptr;
      if (k < rec.steps.size() && rec.steps[k].localized_region >= 0 &&
          static_cast<std::size_t>(rec.steps[k].localized_region) < rec.region_boxes.size()) {
        picked = &rec.region_boxes[static_cast<std::size_t>(rec.steps[k].localized_region)];
      }
      mentions.push_back({cls, picked});
      if (grounded_classes.count(cls)) ++n_correct_gen;
    }
    for (const auto& gold : rec.gold_grounded) {
      ++n_gold;
      bool generated = false, localized = false;
      for (const Mention& m : mentions) {
        if (m.cls != gold.cls) continue;
        generated = true;
        if (m.box && iou(*m.box, gold.box) > iou_threshold) localized = true;
      }
      if (generated) {
        ++n_gold_generated;
        if (localized) {
          ++tp_all;
          ++tp_loc;
        }
      }
    }
  }
  const double p_all = detail::safe_div(double(tp_all), double(n_generated));
  const double r_all = detail::safe_div(double(tp_all), double(n_gold));
  const double f1_all = detail::safe_div(2.0 * p_all * r_all, p_all + r_all);
  const double p_loc = detail::safe_div(double(tp_loc), double(n_correct_gen));
  const double r_loc = detail::safe_div(double(tp_loc), double(n_gold_generated));
  const double f1_loc = detail::safe_div(2.0 * p_loc * r_loc, p_loc + r_loc);
  return {f1_all, f1_loc};
}

// GRD: fraction of generated grounded words whose argmax-attended region
// overlaps the gold box with IoU over 0.5. ATT: the same fraction for the
// teacher-forced trace over the gold caption's grounded words.
inline std::pair<double, double> grd_att(const std::vector<EvalRecord>& records,
                                         const ObjectLexicon& lexicon) {
  std::size_t grd_total = 0, grd_hit = 0, att_total = 0, att_hit = 0;
  for (const EvalRecord& rec : records) {
    for (std::size_t k = 0; k < rec.tokens.size(); ++k) {
      if (!lexicon.is_object(rec.tokens[k])) continue;
      const Box* gold = detail::gold_box_for_class(rec, lexicon.class_of(rec.tokens[k]));
      if (!gold) continue;  // no gold box for this class: not a grounded word
      if (k >= rec.steps.size() || rec.steps[k].region_attention.empty()) {
        throw DataError("grd_att: missing attention trace at generated step " +
                        std::to_string(k));
      }
      ++grd_total;
      const auto& attn = rec.steps[k].region_attention;
      std::size_t best = 0;
      for (std::size_t i = 1; i < attn.size(); ++i)
        if (attn[i] > attn[best]) best = i;
      if (best < rec.region_boxes.size() && iou(rec.region_boxes[best], *gold) > 0.5) ++grd_hit;
    }
    for (const auto& gold : rec.gold_grounded) {
      const std::size_t step = static_cast<std::size_t>(gold.t);
      if (step >= rec.gold_steps.size() || rec.gold_steps[step].region_attention.empty()) {
        throw DataError("grd_att: missing teacher-forced trace at gold step " +
                        std::to_string(gold.t));
      }
      ++att_total;
      const auto& attn = rec.gold_steps[step].region_attention;
      std::size_t best = 0;
      for (std::size_t i = 1; i < attn.size(); ++i)
        if (attn[i] > attn[best]) best = i;
      if (best < rec.region_boxes.size() && iou(rec.region_boxes[best], gold.box) > 0.5) ++att_hit;
    }
  }
  return {detail::safe_div(double(grd_hit), double(grd_total)),
          detail::safe_div(double(att_hit), double(att_total))};
}

namespace detail {

using Ngram = std::vector<int>;

inline std::map<Ngram, std::size_t> ngram_counts(const std::vector<int>& tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

}  // namespace detail

// Corpus BLEU with brevity penalty (modified n-gram precision, counts clipped
// by the per-record maximum reference count).
inline double bleu(const std::vector<EvalRecord>& records, std::size_t max_n) {
  std::size_t cand_len = 0, ref_len = 0;
  std::vector<double> clipped(max_n, 0.0), total(max_n, 0.0);
  for (const EvalRecord& rec : records) {
    if (rec.references.empty()) throw DataError("bleu: record without references");
    cand_len += rec.tokens.size();
    // Closest reference length; ties resolved toward the shorter one.
    std::size_t closest = rec.references[0].size();
    for (const auto& ref : rec.references) {
      const auto diff = [&](std::size_t len) {
        return len > rec.tokens.size() ? len - rec.tokens.size() : rec.tokens.size() - len;
      };
      if (diff(ref.size()) < diff(closest) ||
          (diff(ref.size()) == diff(closest) && ref.size() < closest)) {
        closest = ref.size();
      }
    }
    ref_len += closest;
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto cand = detail::ngram_counts(rec.tokens, n);
      std::map<detail::Ngram, std::size_t> best_ref;
      for (const auto& ref : rec.references) {
        for (const auto& [gram, c] : detail::ngram_counts(ref, n)) {
          best_ref[gram] = std::max(best_ref[gram], c);
        }
      }
      for (const auto& [gram, c] : cand) {
        total[n - 1] += static_cast<double>(c);
        auto it = best_ref.find(gram);
        if (it != best_ref.end()) {
          clipped[n - 1] += static_cast<double>(std::min(c, it->second));
        }
      }
    }
  }
  double log_precision = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const double p = detail::safe_div(clipped[n - 1], total[n - 1]);
    if (p == 0.0) return 0.0;
    log_precision += std::log(p) / static_cast<double>(max_n);
  }
  const double bp = cand_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) /
                                             std::max<double>(1.0, double(cand_len)));
  return bp * std::exp(log_precision);
}

// CIDEr with tf-idf n-gram weighting (n = 1..4), idf computed over the
// reference side of the evaluation corpus itself, canonical x10 scale.
inline double cider(const std::vector<EvalRecord>& records) {
  constexpr std::size_t kMaxN = 4;
  const double n_docs = static_cast<double>(records.size());
  std::vector<std::map<detail::Ngram, double>> df(kMaxN);
  for (const EvalRecord& rec : records) {
    if (rec.references.empty()) throw DataError("cider: record without references");
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<detail::Ngram> seen;
      for (const auto& ref : rec.references) {
        for (const auto& [gram, c] : detail::ngram_counts(ref, n)) seen.insert(gram);
      }
      for (const auto& gram : seen) df[n - 1][gram] += 1.0;
    }
  }
  const double log_docs = std::log(std::max(1.0, n_docs));
  auto tfidf = [&](const std::vector<int>& tokens, std::size_t n) {
    std::map<detail::Ngram, double> vec;
    for (const auto& [gram, c] : detail::ngram_counts(tokens, n)) {
      auto it = df[n - 1].find(gram);
      const double d = it == df[n - 1].end() ? 0.0 : it->second;
      vec[gram] = static_cast<double>(c) * (log_docs - std::log(std::max(1.0, d)));
    }
    return vec;
  };
  auto cosine = [](const std::map<detail::Ngram, double>& a,
                   const std::map<detail::Ngram, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [gram, v] : a) {
      na += v * v;
      auto it = b.find(gram);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [gram, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0.0;
  for (const EvalRecord& rec : records) {
    double score = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      auto cand = tfidf(rec.tokens, n);
      double sim = 0.0;
      for (const auto& ref : rec.references) sim += cosine(cand, tfidf(ref, n));
      score += sim / static_cast<double>(rec.references.size()) / static_cast<double>(kMaxN);
    }
    total += score;
  }
  return 10.0 * total / std::max(1.0, n_docs);
}

inline std::tuple<double, double, double> text_metrics(const std::vector<EvalRecord>& records) {
  return {bleu(records, 1), bleu(records, 4), cider(records)};
}

inline MetricsReport compute_metrics(const std::vector<EvalRecord>& records,
                                     const ObjectLexicon& lexicon, bool include_grounding_f1,
                                     const std::string& ablation) {
  MetricsReport report;
  report.n_records = records.size();
  std::tie(report.chair_i, report.chair_s) = chair(records, lexicon);
  report.recall_o = recall_o(records, lexicon);
  if (include_grounding_f1) {
    auto [f1_all, f1_loc] = grounding_f1(records, lexicon);
    report.f1_all = f1_all;
    report.f1_loc = f1_loc;
  }
  std::tie(report.grd, report.att) = grd_att(records, lexicon);
  std::tie(report.bleu1, report.bleu4, report.cider) = text_metrics(records);
  for (const EvalRecord& rec : records) {
    std::set<int> gold;
    for (const auto& g : rec.gold_objects) gold.insert(g.cls);
    for (int tok : rec.tokens) {
      if (!lexicon.is_object(tok)) continue;
      ++report.n_object_mentions;
      if (!gold.count(lexicon.class_of(tok))) ++report.n_hallucinated_mentions;
    }
  }
  report.ablation = ablation;
  return report;
}

// Stable-key-order report JSON.
inline nlohmann::ordered_json report_json(const MetricsReport& r) {
  nlohmann::ordered_json doc;
  doc["ablation"] = r.ablation;
  doc["chair_i"] = r.chair_i;
  doc["chair_s"] = r.chair_s;
  doc["recall_o"] = r.recall_o;
  if (r.f1_all) doc["f1_all"] = *r.f1_all;
  if (r.f1_loc) doc["f1_loc"] = *r.f1_loc;
  doc["grd"] = r.grd;
  doc["att"] = r.att;
  doc["bleu1"] = r.bleu1;
  doc["bleu4"] = r.bleu4;
  doc["cider"] = r.cider;
  doc["f1_averaging"] = "micro";
  doc["iou_threshold"] = 0.5;
  doc["n_records"] = r.n_records;
  doc["n_object_mentions"] = r.n_object_mentions;
  doc["n_hallucinated_mentions"] = r.n_hallucinated_mentions;
  return doc;
}

}  // namespace cgrl
