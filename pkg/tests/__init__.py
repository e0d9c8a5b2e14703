"""
NCS Testbed 測試套件

- 受控體、控制器、通道、閉迴路模擬與目標函數測試
- GA 調整與命令列測試
- UDP 即時節點與部署配置測試
"""
