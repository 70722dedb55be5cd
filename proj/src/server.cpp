#include "detectleak/server.hpp"

#include <httplib.h>

#include "detectleak/error.hpp"
#include "detectleak/log.hpp"

namespace detectleak {

namespace {

using nlohmann::json;

int status_for(RejectReason reason) {
    switch (reason) {
        case RejectReason::unknown_pair: return 404;
        case RejectReason::unassigned:
        case RejectReason::identity_violation: return 403;
        case RejectReason::duplicate:
        case RejectReason::not_conflicted:
        case RejectReason::already_assigned: return 409;
    }
    return 400;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view reason, const std::string& message,
                json extra = json::object()) {
    extra["error"] = reason;
    extra["message"] = message;
    send_json(res, status, extra);
}

json record_json(const AnnotationRecord& r) {
    return {{"pair_id", r.pair_id}, {"annotator", r.annotator_id}, {"label", to_string(r.label)}, {"ts", r.timestamp}};
}

json doc_json(const DocRef& ref, const std::string& text) {
    return {{"dataset", ref.dataset}, {"id", ref.doc_id}, {"text", text}};
}

// Texts are sent verbatim; the client must not normalize them.
json pair_view(const StoredPair& sp, const PairState& st) {
    json corpus = doc_json(sp.pair.corpus, sp.corpus_text);
    corpus["repo_path"] = sp.corpus_repo ? json(*sp.corpus_repo) : json(nullptr);
    json labels = json::array();
    for (const auto& r : st.labels) labels.push_back(record_json(r));
    return {{"pair_id", sp.pair.pair_id},
            {"bench", doc_json(sp.pair.bench, sp.bench_text)},
            {"corpus", corpus},
            {"exact_jaccard", sp.pair.exact_jaccard},
            {"est_jaccard", sp.pair.est_jaccard},
            {"suggested", to_string(sp.pair.suggested)},
            {"status", to_string(st.status)},
            {"assigned", st.assigned},
            {"labels", labels}};
}

json progress_json(const AnnotationStore& store) {
    json body = to_json(store.progress());
    for (auto [name, classes] : {std::pair{"four_class", KappaClasses::four_class},
                                 std::pair{"binary", KappaClasses::binary}}) {
        const auto k = store.kappa(classes);
        json per = json::array();
        for (const auto& p : k.per_annotator_pair) {
            per.push_back({{"annotators", {p.first, p.second}}, {"pairs", p.pairs}, {"kappa", p.kappa}});
        }
        body["kappa"][name] = {{"mean", k.mean ? json(*k.mean) : json(nullptr)}, {"per_annotator_pair", per}};
    }
    return body;
}

// Parses {pair_id, <who>, label}; returns false after answering 400.
bool parse_body(const httplib::Request& req, httplib::Response& res, const char* who, std::string& pair_id,
                std::string& person, Label& label) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
        send_error(res, 400, "malformed", "request body must be a JSON object");
        return false;
    }
    for (const char* field : {"pair_id", who, "label"}) {
        if (!body.contains(field) || !body[field].is_string() || body[field].get<std::string>().empty()) {
            send_error(res, 400, "malformed", std::string("missing string field '") + field + "'");
            return false;
        }
    }
    try {
        label = parse_label(body["label"].get<std::string>());
    } catch (const Error& e) {
        send_error(res, 400, "malformed", e.what());
        return false;
    }
    pair_id = body["pair_id"].get<std::string>();
    person = body[who].get<std::string>();
    return true;
}

template <class F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const Rejected& e) {
        json extra = json::object();
        if (e.existing()) extra["existing"] = record_json(*e.existing());
        send_error(res, status_for(e.reason()), to_string(e.reason()), e.what(), extra);
    } catch (const UsageError& e) {
        send_error(res, 400, "malformed", e.what());
    } catch (const std::exception& e) {
        log_event(LogLevel::error, "http_internal_error", {{"message", e.what()}});
        send_error(res, 500, "internal", e.what());
    }
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, std::optional<std::filesystem::path> static_dir)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
    install_routes();
    if (static_dir) {
        if (!std::filesystem::is_directory(*static_dir)) {
            throw UsageError("static directory not found: " + static_dir->string());
        }
        server_->set_mount_point("/", static_dir->string());
    }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw UsageError("cannot bind " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) {
        throw UsageError("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void AnnotationServer::listen() { server_->listen_after_bind(); }

void AnnotationServer::stop() {
    if (server_) server_->stop();
}

void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

void AnnotationServer::install_routes() {
    auto& s = *server_;

    s.Get("/api/pairs/next", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto annotator = req.get_param_value("annotator");
            if (annotator.empty()) {
                send_error(res, 400, "malformed", "query parameter 'annotator' is required");
                return;
            }
            const auto next = store_.next_pair(annotator);
            if (!next) {
                send_json(res, 200, {{"queue_empty", true}, {"annotator", annotator}});
                return;
            }
            json view = pair_view(*store_.pair(*next), *store_.state(*next));
            view["queue_empty"] = false;
            send_json(res, 200, view);
        });
    });

    s.Get(R"(/api/pairs/([0-9a-fA-F]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            const auto sp = store_.pair(id);
            if (!sp) {
                send_error(res, 404, to_string(RejectReason::unknown_pair), "unknown pair " + id);
                return;
            }
            send_json(res, 200, pair_view(*sp, *store_.state(id)));
        });
    });

    s.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string pair_id, annotator;
            Label label{};
            if (!parse_body(req, res, "annotator", pair_id, annotator, label)) return;
            const auto rec = store_.submit(pair_id, annotator, label);
            json body = record_json(rec);
            body["status"] = to_string(store_.state(pair_id)->status);
            send_json(res, 201, body);
        });
    });

    s.Get("/api/conflicts", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            json items = json::array();
            for (const auto& id : store_.conflicts()) {
                if (auto sp = store_.pair(id)) items.push_back(pair_view(*sp, *store_.state(id)));
            }
            send_json(res, 200, {{"conflicts", items}, {"count", items.size()}});
        });
    });

    s.Post("/api/adjudications", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string pair_id, adjudicator;
            Label label{};
            if (!parse_body(req, res, "adjudicator", pair_id, adjudicator, label)) return;
            const auto adj = store_.adjudicate(pair_id, adjudicator, label);
            send_json(res, 201,
                      {{"pair_id", adj.pair_id},
                       {"final_label", to_string(adj.final_label)},
                       {"final_binary", to_string(collapse(adj.final_label))},
                       {"resolved_by", to_string(adj.resolved_by)},
                       {"adjudicator", adj.adjudicator_id ? json(*adj.adjudicator_id) : json(nullptr)}});
        });
    });

    s.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, progress_json(store_)); });
    });

    s.Get("/api/labels", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, {{"labels", store_.export_labels()}}); });
    });
}

}  // namespace detectleak
