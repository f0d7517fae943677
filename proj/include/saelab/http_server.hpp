#pragma once

// Binds Service::route to an httplib server. All payloads are JSON.

#include <string>

// Eigen first: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen's
// product kernels if they are parsed afterwards.
#include "saelab/service.hpp"

#include <httplib.h>

namespace saelab {

inline void bind_routes(httplib::Server& server, Service& service) {
  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [key, value] : req.params) r.query[key] = value;
    const Response out = service.route(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(".*", handler);
  server.Post(".*", handler);
}

// Blocks until the server stops.
inline bool serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  bind_routes(server, service);
  return server.listen(host, port);
}

}  // namespace saelab
