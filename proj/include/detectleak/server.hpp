#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "detectleak/annotation.hpp"

namespace httplib {
class Server;
}

namespace detectleak {

/// HTTP front of an AnnotationStore.
///
///   GET  /api/pairs/next?annotator=ID
///   POST /api/labels          {pair_id, annotator, label}
///   GET  /api/conflicts
///   POST /api/adjudications   {pair_id, adjudicator, label}
///   GET  /api/progress
///
/// Rejections map to 404 (unknown pair), 403 (unassigned / identity), 409
/// (duplicate / not conflicted) and 400 (malformed body), always with a JSON
/// body `{"error": reason, "message": ...}`.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store,
                     std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~AnnotationServer();

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds to `host:port` (port 0 picks a free port) and returns the port.
    int bind(const std::string& host, int port);
    /// Blocks serving requests until stop() is called.
    void listen();
    void stop();
    void wait_until_ready() const;

private:
    void install_routes();

    AnnotationStore& store_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace detectleak
