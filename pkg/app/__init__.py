"""主应用模块"""

