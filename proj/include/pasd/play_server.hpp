#ifndef PASD_PLAY_SERVER_HPP_
#define PASD_PLAY_SERVER_HPP_

#include <memory>
#include <string>

#include "pasd/play.hpp"

namespace pasd {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  HubOptions hub;
};

// HTTP + WebSocket front end for PlayHub: GET /layouts, GET /checkpoints and
// the /ws/play socket. Everything runs on one event loop thread; each
// session has its own tick timer.
class PlayServer {
 public:
  // Binds immediately; throws IoError when the port is taken.
  explicit PlayServer(ServerOptions options);
  ~PlayServer();

  unsigned short port() const;
  // Serves until stop() is called.
  void run();
  // Safe from any thread or a signal handler context via the event loop.
  // Ends open sessions and writes their logs.
  void stop();
  // Stops on SIGINT or SIGTERM.
  void stop_on_signals();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pasd

#endif  // PASD_PLAY_SERVER_HPP_
