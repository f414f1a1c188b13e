#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "relnet/checkpoint.hpp"
#include "relnet/model.hpp"
#include "relnet/rng.hpp"

namespace relnet {

// One synthetic TV series.
struct SeriesRecord {
    int id = 0;
    int release_day = 0;
    int genre_id = 0;
    int director_id = 0;
    int lead_actor_id = 0;
    int episode_count = 1;
    double budget_score = 0.0; // in [0,1]
    double buzz_score = 0.0;   // in [0,1]
    double view_count = 1.0;   // ground truth, > 0
    double popularity_index = 0.0;

    bool operator==(const SeriesRecord&) const = default;
};

struct GeneratorConfig {
    std::size_t num_series = 2500;
    int horizon_days = 1460;
    std::size_t genre_cardinality = 50;
    std::size_t director_cardinality = 60;
    std::size_t actor_cardinality = 100;
    double competition_strength = 0.5;
    int competition_window_days = 30;
    double noise_std = 0.35;
    double aux_noise_std = 0.2;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_series == 0) throw config_error("GeneratorConfig: num_series must be positive");
        if (horizon_days <= 0) throw config_error("GeneratorConfig: horizon_days must be positive");
        if (genre_cardinality == 0 || director_cardinality == 0 || actor_cardinality == 0)
            throw config_error("GeneratorConfig: categorical cardinalities must be positive");
        if (competition_strength < 0.0)
            throw config_error("GeneratorConfig: competition_strength must be >= 0");
        if (competition_window_days <= 0 || competition_window_days > horizon_days)
            throw config_error("GeneratorConfig: competition_window_days must be in [1, horizon_days]");
        if (noise_std < 0.0 || aux_noise_std < 0.0)
            throw config_error("GeneratorConfig: noise levels must be >= 0");
    }
};

inline json generator_config_to_json(const GeneratorConfig& c) {
    return json{{"num_series", c.num_series},
                {"horizon_days", c.horizon_days},
                {"genre_cardinality", c.genre_cardinality},
                {"director_cardinality", c.director_cardinality},
                {"actor_cardinality", c.actor_cardinality},
                {"competition_strength", c.competition_strength},
                {"competition_window_days", c.competition_window_days},
                {"noise_std", c.noise_std},
                {"aux_noise_std", c.aux_noise_std},
                {"seed", c.seed}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig c;
    c.num_series = j.at("num_series").get<std::size_t>();
    c.horizon_days = j.at("horizon_days").get<int>();
    c.genre_cardinality = j.at("genre_cardinality").get<std::size_t>();
    c.director_cardinality = j.at("director_cardinality").get<std::size_t>();
    c.actor_cardinality = j.at("actor_cardinality").get<std::size_t>();
    c.competition_strength = j.at("competition_strength").get<double>();
    c.competition_window_days = j.at("competition_window_days").get<int>();
    c.noise_std = j.at("noise_std").get<double>();
    c.aux_noise_std = j.at("aux_noise_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

// One-hot blocks for the categoricals plus raw numerics, in the fixed order
// [genre | director | actor | episode_count, budget_score, buzz_score].
class FeatureEncoder {
public:
    FeatureEncoder() = default;
    FeatureEncoder(std::size_t genre_card, std::size_t director_card, std::size_t actor_card)
        : genre_card_(genre_card), director_card_(director_card), actor_card_(actor_card) {}

    std::size_t input_dim() const { return genre_card_ + director_card_ + actor_card_ + 3; }
    std::size_t genre_cardinality() const { return genre_card_; }
    std::size_t director_cardinality() const { return director_card_; }
    std::size_t actor_cardinality() const { return actor_card_; }
    std::size_t genre_offset() const { return 0; }
    std::size_t director_offset() const { return genre_card_; }
    std::size_t actor_offset() const { return genre_card_ + director_card_; }
    std::size_t buzz_index() const { return genre_card_ + director_card_ + actor_card_ + 2; }

    std::vector<double> encode(const SeriesRecord& rec) const {
        auto in_range = [&](int id, std::size_t card, const char* field) {
            if (id < 0 || static_cast<std::size_t>(id) >= card)
                throw config_error("encode_features: " + std::string(field) + " id " +
                                   std::to_string(id) + " outside vocabulary of size " +
                                   std::to_string(card));
        };
        in_range(rec.genre_id, genre_card_, "genre");
        in_range(rec.director_id, director_card_, "director");
        in_range(rec.lead_actor_id, actor_card_, "lead_actor");
        std::vector<double> x(input_dim(), 0.0);
        x[genre_offset() + rec.genre_id] = 1.0;
        x[director_offset() + rec.director_id] = 1.0;
        x[actor_offset() + rec.lead_actor_id] = 1.0;
        std::size_t n = actor_offset() + actor_card_;
        x[n] = static_cast<double>(rec.episode_count);
        x[n + 1] = rec.budget_score;
        x[n + 2] = rec.buzz_score;
        return x;
    }

    // The pad vector for missing competitors: all zero, outside every one-hot
    // range, so a network can learn to ignore it.
    std::vector<double> zero_vector() const { return std::vector<double>(input_dim(), 0.0); }

    json to_json() const {
        return json{{"genre_cardinality", genre_card_},
                    {"director_cardinality", director_card_},
                    {"actor_cardinality", actor_card_},
                    {"numeric_fields", {"episode_count", "budget_score", "buzz_score"}}};
    }

    static FeatureEncoder from_json(const json& j) {
        return FeatureEncoder(j.at("genre_cardinality").get<std::size_t>(),
                              j.at("director_cardinality").get<std::size_t>(),
                              j.at("actor_cardinality").get<std::size_t>());
    }

private:
    std::size_t genre_card_ = 0, director_card_ = 0, actor_card_ = 0;
};

struct MarketDataset {
    GeneratorConfig config;
    FeatureEncoder encoder;
    std::vector<SeriesRecord> records; // sorted by (release_day, id)
};

namespace market_detail {

// Latent demand model constants. These define the planted structure: a wide
// sparse part (per-id effects), smooth numeric effects, embedding
// interactions and a mild nonlinearity, plus a competition term that only
// depends on the few most popular overlapping competitors.
constexpr double kLogViewIntercept = 2.5; // view counts carried in thousands
constexpr double kGenreEffectStd = 0.30;
constexpr double kDirectorEffectStd = 0.25;
constexpr double kActorEffectStd = 0.25;
constexpr int kEmbedDim = 4;
constexpr double kEmbedComponentStd = 0.5;
constexpr double kInteractionScale = 0.2;
constexpr double kEpisodeWeight = 0.25;
constexpr double kEpisodeLogCenter = 2.4849066497880004; // log(12)
constexpr double kBudgetWeight = 0.7;
constexpr double kBuzzWeight = 0.7;
constexpr double kNonlinAmplitude = 0.15;
constexpr double kAttractThreshold = 0.7;
constexpr double kPopularityOffset = 0.0;
constexpr double kPopularityScale = 2.0;
// Shelf space: how many of the most popular overlapping competitors actually
// exert pressure on a series' demand.
constexpr int kCompetitorsConsidered = 3;

struct LatentTables {
    std::vector<double> genre_effect, director_effect, actor_effect;
    std::vector<std::vector<double>> genre_emb, director_emb, actor_emb;
};

inline std::vector<double> draw_effects(std::uint64_t seed, const char* tag, std::size_t n,
                                        double stddev) {
    RngStream rng(derive_seed(seed, tag));
    std::vector<double> out(n);
    for (double& v : out) v = rng.normal(0.0, stddev);
    return out;
}

inline std::vector<std::vector<double>> draw_embeddings(std::uint64_t seed, const char* tag,
                                                        std::size_t n) {
    RngStream rng(derive_seed(seed, tag));
    std::vector<std::vector<double>> out(n, std::vector<double>(kEmbedDim));
    for (auto& row : out)
        for (double& v : row) v = rng.normal(0.0, kEmbedComponentStd);
    return out;
}

inline LatentTables make_tables(const GeneratorConfig& cfg) {
    LatentTables t;
    t.genre_effect = draw_effects(cfg.seed, "genre_effect", cfg.genre_cardinality, kGenreEffectStd);
    t.director_effect =
        draw_effects(cfg.seed, "director_effect", cfg.director_cardinality, kDirectorEffectStd);
    t.actor_effect = draw_effects(cfg.seed, "actor_effect", cfg.actor_cardinality, kActorEffectStd);
    t.genre_emb = draw_embeddings(cfg.seed, "genre_emb", cfg.genre_cardinality);
    t.director_emb = draw_embeddings(cfg.seed, "director_emb", cfg.director_cardinality);
    t.actor_emb = draw_embeddings(cfg.seed, "actor_emb", cfg.actor_cardinality);
    return t;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// The additive slice of demand: per-id effects plus smooth numeric terms.
// This is the part a learner can compose for series it never saw.
inline double star_power(const SeriesRecord& rec, const LatentTables& t) {
    double s = 0.0;
    s += t.genre_effect[rec.genre_id];
    s += t.director_effect[rec.director_id];
    s += t.actor_effect[rec.lead_actor_id];
    s += kEpisodeWeight * (std::log(static_cast<double>(rec.episode_count)) - kEpisodeLogCenter);
    s += kBudgetWeight * (rec.budget_score - 0.5);
    s += kBuzzWeight * (rec.buzz_score - 0.5);
    return s;
}

// Pre-competition log demand; a deterministic function of the raw features.
inline double base_demand(const SeriesRecord& rec, const LatentTables& t) {
    const auto& ug = t.genre_emb[rec.genre_id];
    const auto& ud = t.director_emb[rec.director_id];
    const auto& ua = t.actor_emb[rec.lead_actor_id];
    double base = kLogViewIntercept + star_power(rec, t);
    base += kInteractionScale * (dot(ug, ud) + dot(ud, ua) + dot(ug, ua));
    base += kNonlinAmplitude *
            std::tanh(dot(ug, ua) + 4.0 * (rec.budget_score - 0.5) * (rec.buzz_score - 0.5));
    return base;
}

// How much audience a series pulls away from overlapping competitors. Only
// standout series steal viewers, proportionally to how far their star power
// stands above the crowd; ordinary releases exert no pressure.
inline double attractiveness(double star) {
    double edge = star - kAttractThreshold;
    return edge > 0.0 ? edge : 0.0;
}

// Overlap decay: releases at the window edge still press with half the
// weight of same-day releases.
inline double decay_weight(int day_gap, int window) {
    double gap = std::fabs(static_cast<double>(day_gap));
    if (gap > static_cast<double>(window)) return 0.0;
    return 1.0 - 0.5 * gap / static_cast<double>(window);
}

} // namespace market_detail

// Ranking used both by the generator's competition term and by
// select_related: most popular first, then closest release, then smallest id.
inline bool rank_candidate_before(const SeriesRecord& a, int gap_a, const SeriesRecord& b,
                                  int gap_b) {
    if (a.popularity_index != b.popularity_index)
        return a.popularity_index > b.popularity_index;
    if (std::abs(gap_a) != std::abs(gap_b)) return std::abs(gap_a) < std::abs(gap_b);
    return a.id < b.id;
}

// Deterministic synthetic market. Every draw is keyed by (seed, purpose, id),
// so excluding a series (exclude_ids, used by paired-generation tests) leaves
// all other series' attributes and noise untouched; only the competition term
// reacts.
inline MarketDataset generate_market(const GeneratorConfig& cfg,
                                     const std::set<int>& exclude_ids = {}) {
    cfg.validate();
    namespace md = market_detail;
    md::LatentTables tables = md::make_tables(cfg);

    MarketDataset ds;
    ds.config = cfg;
    ds.encoder =
        FeatureEncoder(cfg.genre_cardinality, cfg.director_cardinality, cfg.actor_cardinality);

    struct Latent {
        double base = 0.0, attract = 0.0, noise = 0.0;
    };
    std::vector<Latent> latents;

    for (std::size_t id = 0; id < cfg.num_series; ++id) {
        if (exclude_ids.count(static_cast<int>(id))) continue;
        RngStream rng(derive_seed(cfg.seed, "series", id));
        SeriesRecord rec;
        rec.id = static_cast<int>(id);
        rec.release_day = static_cast<int>(rng.uniform_index(cfg.horizon_days));
        rec.genre_id = static_cast<int>(rng.uniform_index(cfg.genre_cardinality));
        rec.director_id = static_cast<int>(rng.uniform_index(cfg.director_cardinality));
        rec.lead_actor_id = static_cast<int>(rng.uniform_index(cfg.actor_cardinality));
        rec.episode_count = 6 + static_cast<int>(rng.uniform_index(19));
        rec.budget_score = rng.uniform();
        rec.buzz_score = rng.uniform();
        double noise = rng.normal(0.0, cfg.noise_std);
        double aux_noise = rng.normal(0.0, cfg.aux_noise_std);

        Latent lat;
        lat.base = md::base_demand(rec, tables);
        lat.attract = md::attractiveness(md::star_power(rec, tables));
        lat.noise = noise;
        rec.popularity_index = md::kPopularityOffset +
                               md::kPopularityScale * (lat.base - md::kLogViewIntercept) + aux_noise;
        ds.records.push_back(rec);
        latents.push_back(lat);
    }

    // sort by (release_day, id); keep latents aligned
    std::vector<std::size_t> order(ds.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (ds.records[a].release_day != ds.records[b].release_day)
            return ds.records[a].release_day < ds.records[b].release_day;
        return ds.records[a].id < ds.records[b].id;
    });
    std::vector<SeriesRecord> sorted_recs;
    std::vector<Latent> sorted_lat;
    for (std::size_t i : order) {
        sorted_recs.push_back(ds.records[i]);
        sorted_lat.push_back(latents[i]);
    }
    ds.records = std::move(sorted_recs);
    latents = std::move(sorted_lat);

    // competition: the top few most popular competitors inside the window
    // subtract decayed attractiveness from a series' log demand
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        SeriesRecord& rec = ds.records[i];
        std::vector<std::size_t> window;
        for (std::size_t j = 0; j < ds.records.size(); ++j) {
            if (j == i) continue;
            int gap = ds.records[j].release_day - rec.release_day;
            if (std::abs(gap) <= cfg.competition_window_days) window.push_back(j);
        }
        std::sort(window.begin(), window.end(), [&](std::size_t a, std::size_t b) {
            return rank_candidate_before(ds.records[a], ds.records[a].release_day - rec.release_day,
                                         ds.records[b], ds.records[b].release_day - rec.release_day);
        });
        if (window.size() > static_cast<std::size_t>(md::kCompetitorsConsidered))
            window.resize(md::kCompetitorsConsidered);
        double pressure = 0.0;
        for (std::size_t j : window)
            pressure += md::decay_weight(ds.records[j].release_day - rec.release_day,
                                         cfg.competition_window_days) *
                        latents[j].attract;
        double log_view =
            latents[i].base - cfg.competition_strength * pressure + latents[i].noise;
        rec.view_count = std::exp(log_view);
    }
    return ds;
}

// The selection rule behind the relational dataset: all other series within
// the competition window, most popular first, closest release date breaking
// ties. Missing slots are padded (nullptr) and counted.
struct RelatedSelection {
    std::vector<const SeriesRecord*> picks; // exactly n entries; nullptr = zero pad
    std::size_t pad_count = 0;
};

inline RelatedSelection select_related(const MarketDataset& ds, const SeriesRecord& target,
                                       std::size_t n) {
    std::vector<const SeriesRecord*> candidates;
    for (const SeriesRecord& rec : ds.records) {
        if (rec.id == target.id) continue;
        int gap = rec.release_day - target.release_day;
        if (std::abs(gap) <= ds.config.competition_window_days) candidates.push_back(&rec);
    }
    std::sort(candidates.begin(), candidates.end(), [&](const SeriesRecord* a, const SeriesRecord* b) {
        return rank_candidate_before(*a, a->release_day - target.release_day, *b,
                                     b->release_day - target.release_day);
    });
    RelatedSelection sel;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < candidates.size()) {
            sel.picks.push_back(candidates[i]);
        } else {
            sel.picks.push_back(nullptr);
            ++sel.pad_count;
        }
    }
    return sel;
}

struct RelationalDataset {
    std::vector<RelationalSample> samples; // aligned with MarketDataset.records
    std::vector<int> release_days;
    std::size_t input_dim = 0;
    std::size_t n_related = 0;
};

// The dataset transform: x = encode(target), related = encoded top-n
// competitors, y = log(view_count), y_aux = popularity index. zero_buzz
// emulates predicting long before release, when buzz is not yet observable.
inline RelationalDataset build_relational_dataset(const MarketDataset& ds, std::size_t n,
                                                  bool zero_buzz = false) {
    RelationalDataset out;
    out.input_dim = ds.encoder.input_dim();
    out.n_related = n;
    std::size_t buzz = ds.encoder.buzz_index();
    for (const SeriesRecord& rec : ds.records) {
        RelationalSample s;
        s.x = ds.encoder.encode(rec);
        if (zero_buzz) s.x[buzz] = 0.0;
        RelatedSelection sel = select_related(ds, rec, n);
        for (const SeriesRecord* pick : sel.picks) {
            if (pick) {
                s.related.push_back(ds.encoder.encode(*pick));
                if (zero_buzz) s.related.back()[buzz] = 0.0;
            } else {
                s.related.push_back(ds.encoder.zero_vector());
            }
        }
        s.y = std::log(rec.view_count);
        s.y_aux = rec.popularity_index;
        out.samples.push_back(std::move(s));
        out.release_days.push_back(rec.release_day);
    }
    return out;
}

struct Split {
    int split_day = 0;
    std::vector<std::size_t> train_idx, test_idx;
};

// Train on releases before split_day, test on the rest. Related-object
// lookups still see the whole catalog: competitor metadata is known before
// release, so no targets leak.
inline Split temporal_split(const MarketDataset& ds, int split_day) {
    if (split_day <= 0 || split_day >= ds.config.horizon_days)
        throw config_error("temporal_split: split_day " + std::to_string(split_day) +
                           " outside (0, " + std::to_string(ds.config.horizon_days) + ")");
    Split split;
    split.split_day = split_day;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        if (ds.records[i].release_day < split_day)
            split.train_idx.push_back(i);
        else
            split.test_idx.push_back(i);
    }
    if (split.train_idx.empty()) throw config_error("temporal_split: empty training side");
    if (split.test_idx.empty()) throw config_error("temporal_split: empty test side");
    return split;
}

struct TargetStats {
    double mean = 0.0, stddev = 0.0;
};

inline TargetStats target_stats(const RelationalDataset& data, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw config_error("target_stats: empty index list");
    TargetStats st;
    for (std::size_t i : idx) st.mean += data.samples[i].y;
    st.mean /= static_cast<double>(idx.size());
    for (std::size_t i : idx) {
        double d = data.samples[i].y - st.mean;
        st.stddev += d * d;
    }
    st.stddev = std::sqrt(st.stddev / static_cast<double>(idx.size()));
    return st;
}

inline json record_to_json(const SeriesRecord& r) {
    return json{{"id", r.id},
                {"release_day", r.release_day},
                {"genre_id", r.genre_id},
                {"director_id", r.director_id},
                {"lead_actor_id", r.lead_actor_id},
                {"episode_count", r.episode_count},
                {"budget_score", r.budget_score},
                {"buzz_score", r.buzz_score},
                {"view_count", r.view_count},
                {"popularity_index", r.popularity_index}};
}

inline SeriesRecord record_from_json(const json& j) {
    SeriesRecord r;
    r.id = j.at("id").get<int>();
    r.release_day = j.at("release_day").get<int>();
    r.genre_id = j.at("genre_id").get<int>();
    r.director_id = j.at("director_id").get<int>();
    r.lead_actor_id = j.at("lead_actor_id").get<int>();
    r.episode_count = j.at("episode_count").get<int>();
    r.budget_score = j.at("budget_score").get<double>();
    r.buzz_score = j.at("buzz_score").get<double>();
    r.view_count = j.at("view_count").get<double>();
    r.popularity_index = j.at("popularity_index").get<double>();
    return r;
}

inline constexpr int kDatasetFormatVersion = 1;

// JSON-lines: a header object, then one record per line.
inline void save_dataset(const MarketDataset& ds, const std::string& path) {
    json header{{"format", "relnet-market"},
                {"version", kDatasetFormatVersion},
                {"num_records", ds.records.size()},
                {"config", generator_config_to_json(ds.config)},
                {"encoder", ds.encoder.to_json()}};
    std::string body = header.dump() + "\n";
    for (const SeriesRecord& r : ds.records) body += record_to_json(r).dump() + "\n";
    write_file_atomic(path, body);
}

inline MarketDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open dataset '" + path + "'");
    std::string line;
    std::size_t lineno = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw io_error("dataset '" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    };

    if (!std::getline(in, line)) throw io_error("dataset '" + path + "': missing header line");
    ++lineno;
    json header = parse_line(line);
    MarketDataset ds;
    try {
        if (header.at("format").get<std::string>() != "relnet-market")
            throw io_error("dataset '" + path + "': unrecognized format tag");
        int version = header.at("version").get<int>();
        if (version != kDatasetFormatVersion)
            throw io_error("dataset '" + path + "': format version " + std::to_string(version) +
                           ", expected " + std::to_string(kDatasetFormatVersion));
        ds.config = generator_config_from_json(header.at("config"));
        ds.encoder = FeatureEncoder::from_json(header.at("encoder"));
    } catch (const json::exception& e) {
        throw io_error("dataset '" + path + "' line 1: " + e.what());
    }
    std::size_t expected = header.at("num_records").get<std::size_t>();

    std::set<int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line);
        SeriesRecord rec;
        try {
            rec = record_from_json(j);
        } catch (const json::exception& e) {
            throw io_error("dataset '" + path + "' line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(rec.id).second)
            throw io_error("dataset '" + path + "' line " + std::to_string(lineno) +
                           ": duplicate id " + std::to_string(rec.id));
        ds.records.push_back(rec);
    }
    if (ds.records.size() != expected)
        throw io_error("dataset '" + path + "' line " + std::to_string(lineno) + ": has " +
                       std::to_string(ds.records.size()) + " records, header promises " +
                       std::to_string(expected) + " (truncated or padded file)");
    return ds;
}

} // namespace relnet
