#include "mrfibp/service.hpp"

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace mrfibp {

using json = nlohmann::json;

SearchIndex::SearchIndex(std::vector<HeatMapStack> stacks) : stacks_(std::move(stacks)) {
    if (!stacks_.empty()) names_ = stacks_.front().factor_names;
    for (std::size_t i = 0; i < stacks_.size(); ++i) {
        const auto& s = stacks_[i];
        if (s.factor_names != names_)
            throw Error(ErrorCode::vocabulary_mismatch,
                        "heat maps of '" + s.image_id + "' use different factor names");
        if (!by_id_.emplace(s.image_id, i).second)
            throw Error(ErrorCode::validation, "duplicate image id '" + s.image_id + "' in index");
    }
}

const HeatMapStack& SearchIndex::stack(const std::string& image_id) const {
    const auto it = by_id_.find(image_id);
    if (it == by_id_.end()) throw Error(ErrorCode::unknown_factor, "unknown image '" + image_id + "'");
    return stacks_[it->second];
}

std::vector<RankedImage> SearchIndex::search(const QueryTerm& query, std::optional<double> min_score) const {
    query.validate(names_.size());
    return rank_images(stacks_, query, min_score);
}

SearchRequest SearchIndex::parse_request(const std::string& body) const {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse_error, std::string("search body: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::parse_error, "search body: expected an object");

    SearchRequest req;
    try {
        if (j.contains("query")) {
            req.query = parse_query(j.at("query").get<std::string>(), names_);
            if (j.contains("colocated")) {
                const bool c = j.at("colocated").get<bool>();
                for (auto& g : req.query.groups) g.colocated = c;
            }
        } else if (j.contains("groups")) {
            for (const auto& g : j.at("groups")) {
                QueryGroup group;
                for (const auto& name : g.at("factors")) group.factors.push_back(factor_index(name.get<std::string>(), names_));
                group.colocated = g.value("colocated", true);
                req.query.groups.push_back(std::move(group));
            }
        } else {
            throw Error(ErrorCode::parse_error, "search body: needs 'groups' or 'query'");
        }
        if (j.contains("min_score") && !j.at("min_score").is_null()) req.min_score = j.at("min_score").get<double>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, std::string("search body: ") + e.what());
    }
    req.query.validate(names_.size());
    return req;
}

std::string results_json(std::span<const RankedImage> results) {
    json arr = json::array();
    for (const auto& r : results) arr.push_back({{"image_id", r.image_id}, {"score", r.score}});
    return json{{"results", std::move(arr)}}.dump();
}

namespace {

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::internal:
    case ErrorCode::io: return 500;
    default: return 400;
    }
}

void send_error(httplib::Response& res, const Error& e) {
    res.status = http_status(e.code());
    res.set_content(json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump(),
                    "application/json");
}

// Wraps a handler so library errors become JSON error bodies.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            send_error(res, e);
        } catch (const std::exception& e) {
            send_error(res, Error(ErrorCode::internal, e.what()));
        }
    };
}

} // namespace

void mount_routes(httplib::Server& server, const SearchIndex& index, const AppearanceModel* model) {
    server.Get("/api/health", guarded([&index, model](const httplib::Request&, httplib::Response& res) {
        json j = {{"status", "ok"}, {"images", index.size()}, {"factors", index.factor_names().size()}};
        if (model) j["model"] = {{"factors", model->factors()}, {"feature_dim", model->feature_dim()}};
        res.set_content(j.dump(), "application/json");
    }));

    server.Get("/api/factors", guarded([&index](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"factors", index.factor_names()}}.dump(), "application/json");
    }));

    server.Post("/api/search", guarded([&index](const httplib::Request& req, httplib::Response& res) {
        const auto request = index.parse_request(req.body);
        res.set_content(results_json(index.search(request.query, request.min_score)), "application/json");
    }));

    server.Get(R"(/api/heatmap/([^/]+)/([^/]+))", guarded([&index](const httplib::Request& req, httplib::Response& res) {
        const std::string image_id = req.matches[1], factor = req.matches[2];
        const HeatMapStack* stack = nullptr;
        std::size_t k = 0;
        try {
            stack = &index.stack(image_id);
            k = factor_index(factor, index.factor_names());
        } catch (const Error& e) {
            send_error(res, e);
            res.status = 404;
            return;
        }
        json j = {{"image_id", image_id}, {"width", stack->width}, {"height", stack->height}, {"factor", factor},
                  {"map", stack->maps[k]}};
        res.set_content(j.dump(), "application/json");
    }));

    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        spdlog::info("http method={} path={} status={} bytes={}", req.method, req.path, res.status, res.body.size());
    });
}

} // namespace mrfibp
